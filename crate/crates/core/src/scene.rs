//! Bundled 256×256 grayscale test scene (the public-domain "cameraman"
//! photograph, box-downsampled from 512×512).

use crate::data_io::{parse_pgm, Result};
use crate::imaging::Image2D;

const CAMERAMAN_PGM: &[u8] = include_bytes!("../data/cameraman_256.pgm");

/// Scene pixels in `[0, 1]`.
pub fn cameraman() -> Result<Image2D> {
    parse_pgm(CAMERAMAN_PGM)?.to_image()
}
