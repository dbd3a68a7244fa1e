//! Wavefront randomization for aberration-invariant imaging.
//!
//! The crate is organized bottom-up:
//!
//! - [`optics`]: pupils, Seidel phase profiles, random phase masks.
//! - [`transfer`]: MTFs, the diffraction limit and the random-mask MTF laws.
//! - [`rand_stats`]: keyed random substreams and the KS / chi-square kit.
//! - [`imaging`]: 2-D PSF, convolution, noise, Wiener deconvolution, SSIM.
//! - [`data_io`]: PGM, CSV and JSON writers/readers.
//! - [`experiment`]: config-driven runs behind the `wavemask` CLI.

mod fourier;
pub mod data_io;
pub mod experiment;
pub mod imaging;
pub mod optics;
pub mod rand_stats;
pub mod scene;
pub mod transfer;
