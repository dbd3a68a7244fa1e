//! File formats: binary PGM (P5, 8-bit), long-format CSV and JSON.

use crate::imaging::{Image2D, ImagingError};
use serde::{Deserialize, Serialize};
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataIoError {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("malformed PGM header: {0}")]
    MalformedHeader(String),
    #[error("unsupported PGM maxval {0} (only 255 is supported)")]
    UnsupportedMaxval(u32),
    #[error("truncated PGM raster: expected {expected} bytes starting at byte offset {offset}, file ends at byte offset {end}")]
    Truncated { offset: usize, expected: usize, end: usize },
    #[error(transparent)]
    Image(#[from] ImagingError),
    #[error("CSV error on {path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error("JSON error on {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

pub type Result<T> = std::result::Result<T, DataIoError>;

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> DataIoError + '_ {
    move |source| DataIoError::Io { path: path.to_path_buf(), source }
}

/// 8-bit grayscale raster as stored in a P5 file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PgmImage {
    pub width: usize,
    pub height: usize,
    pub raster: Vec<u8>,
}

impl PgmImage {
    pub fn to_image(&self) -> Result<Image2D> {
        let pixels = self.raster.iter().map(|&b| b as f64 / 255.0).collect();
        Ok(Image2D::new(self.height, self.width, pixels)?)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.raster);
        out
    }
}

/// Read one whitespace-delimited header token, skipping `#` comments.
fn header_token(bytes: &[u8], pos: &mut usize, what: &str) -> Result<String> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
            continue;
        }
        break;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() && bytes[*pos] != b'#' {
        *pos += 1;
    }
    if start == *pos {
        return Err(DataIoError::MalformedHeader(format!("missing {what} at byte offset {start}")));
    }
    Ok(String::from_utf8_lossy(&bytes[start..*pos]).into_owned())
}

fn header_number(bytes: &[u8], pos: &mut usize, what: &str) -> Result<u32> {
    let tok = header_token(bytes, pos, what)?;
    tok.parse::<u32>()
        .map_err(|_| DataIoError::MalformedHeader(format!("{what} is not a nonnegative integer: {tok:?}")))
}

pub fn parse_pgm(bytes: &[u8]) -> Result<PgmImage> {
    let mut pos = 0;
    let magic = header_token(bytes, &mut pos, "magic number")?;
    if magic != "P5" {
        return Err(DataIoError::MalformedHeader(format!("expected magic P5, found {magic:?}")));
    }
    let width = header_number(bytes, &mut pos, "width")? as usize;
    let height = header_number(bytes, &mut pos, "height")? as usize;
    if width == 0 || height == 0 {
        return Err(DataIoError::MalformedHeader(format!("zero dimension {width}x{height}")));
    }
    let maxval = header_number(bytes, &mut pos, "maxval")?;
    if maxval != 255 {
        return Err(DataIoError::UnsupportedMaxval(maxval));
    }
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(DataIoError::MalformedHeader(format!(
            "expected a single whitespace byte after maxval at byte offset {pos}"
        )));
    }
    let offset = pos + 1;
    let expected = width * height;
    if bytes.len() < offset + expected {
        return Err(DataIoError::Truncated { offset, expected, end: bytes.len() });
    }
    Ok(PgmImage {
        width,
        height,
        raster: bytes[offset..offset + expected].to_vec(),
    })
}

/// Load a P5 file with pixels mapped to `[0, 1]` by `v / 255`.
pub fn load_pgm(path: impl AsRef<Path>) -> Result<Image2D> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(io_err(path))?;
    parse_pgm(&bytes)?.to_image()
}

/// Affine map used to quantize an image for export.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantizationMap {
    pub source_min: f64,
    pub source_max: f64,
    /// Raster value = round_half_even((v - source_min) * scale); 0 when the range is degenerate.
    pub scale: f64,
    /// Raster value used for every pixel of a constant image.
    pub degenerate_value: Option<u8>,
}

impl QuantizationMap {
    pub fn for_image(img: &Image2D) -> Self {
        let (lo, hi) = (img.min(), img.max());
        if hi > lo {
            Self {
                source_min: lo,
                source_max: hi,
                scale: 255.0 / (hi - lo),
                degenerate_value: None,
            }
        } else {
            Self {
                source_min: lo,
                source_max: hi,
                scale: 0.0,
                degenerate_value: Some(128),
            }
        }
    }

    pub fn quantize(&self, v: f64) -> u8 {
        match self.degenerate_value {
            Some(d) => d,
            None => ((v - self.source_min) * self.scale).round_ties_even().clamp(0.0, 255.0) as u8,
        }
    }
}

pub fn quantize(img: &Image2D) -> (PgmImage, QuantizationMap) {
    let map = QuantizationMap::for_image(img);
    let raster = img.pixels().iter().map(|&v| map.quantize(v)).collect();
    (
        PgmImage {
            width: img.width(),
            height: img.height(),
            raster,
        },
        map,
    )
}

/// Path of the JSON file describing a PGM export's quantization.
pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

/// Write `img` as P5, min→0 and max→255, plus a `<path>.json` sidecar with
/// the mapping. Returns the sidecar path.
pub fn store_pgm(img: &Image2D, path: impl AsRef<Path>) -> Result<PathBuf> {
    let path = path.as_ref();
    let (pgm, map) = quantize(img);
    fs::write(path, pgm.to_bytes()).map_err(io_err(path))?;
    let sidecar = sidecar_path(path);
    write_json(&map, &sidecar)?;
    Ok(sidecar)
}

/// Lossless text form of an `f64` (17 significant digits).
pub fn format_float(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else if v.is_nan() {
        "NaN".to_string()
    } else if v > 0.0 {
        "inf".to_string()
    } else {
        "-inf".to_string()
    }
}

/// One row of the long-format results table.
#[derive(Debug, Clone, PartialEq)]
pub struct LongRow {
    pub experiment: String,
    pub aberration: String,
    pub strength: f64,
    pub sigma: f64,
    pub masked: bool,
    pub n_or_metric: String,
    pub value: f64,
}

pub const LONG_HEADER: [&str; 7] = [
    "experiment",
    "aberration",
    "strength",
    "sigma",
    "masked",
    "n_or_metric",
    "value",
];

impl LongRow {
    fn fields(&self) -> [String; 7] {
        [
            self.experiment.clone(),
            self.aberration.clone(),
            format_float(self.strength),
            format_float(self.sigma),
            self.masked.to_string(),
            self.n_or_metric.clone(),
            format_float(self.value),
        ]
    }
}

/// Write a header and rows; fields are already formatted.
pub fn write_csv<S: AsRef<str>>(header: &[&str], rows: &[Vec<S>], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let csv_err = |source| DataIoError::Csv { path: path.to_path_buf(), source };
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(path)
        .map_err(csv_err)?;
    w.write_record(header).map_err(csv_err)?;
    for row in rows {
        w.write_record(row.iter().map(|s| s.as_ref())).map_err(csv_err)?;
    }
    w.flush().map_err(io_err(path))
}

pub fn write_long_csv(rows: &[LongRow], path: impl AsRef<Path>) -> Result<()> {
    let formatted: Vec<[String; 7]> = rows.iter().map(LongRow::fields).collect();
    let as_vecs: Vec<Vec<&str>> = formatted.iter().map(|r| r.iter().map(String::as_str).collect()).collect();
    write_csv(&LONG_HEADER, &as_vecs, path)
}

/// Pretty JSON with a trailing newline. Field order follows the serialized
/// type's declaration order (maps should be `BTreeMap`).
pub fn write_json<T: Serialize + ?Sized>(value: &T, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut text = serde_json::to_string_pretty(value).map_err(|source| DataIoError::Json {
        path: path.to_path_buf(),
        source,
    })?;
    text.push('\n');
    let mut f = fs::File::create(path).map_err(io_err(path))?;
    f.write_all(text.as_bytes()).map_err(io_err(path))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::BTreeMap;

    fn pgm_bytes(w: usize, h: usize, raster: &[u8]) -> Vec<u8> {
        PgmImage {
            width: w,
            height: h,
            raster: raster.to_vec(),
        }
        .to_bytes()
    }

    #[test]
    fn parse_tiny_raster() {
        let p = parse_pgm(&pgm_bytes(2, 2, &[0, 255, 255, 0])).unwrap();
        let px: Vec<f64> = p.raster.iter().map(|&b| b as f64 / 255.0).collect();
        assert_eq!(px, vec![0.0, 1.0, 1.0, 0.0]);
    }

    #[test]
    fn header_comments_are_skipped() {
        let mut bytes = b"P5 # comment\n# another\n2 1\n255\n".to_vec();
        bytes.extend_from_slice(&[7, 9]);
        assert_eq!(parse_pgm(&bytes).unwrap().raster, vec![7, 9]);
    }

    #[test]
    fn header_errors_are_distinct() {
        assert!(matches!(parse_pgm(b"P2\n2 2\n255\n"), Err(DataIoError::MalformedHeader(_))));
        assert!(matches!(parse_pgm(b"P5\nx 2\n255\n"), Err(DataIoError::MalformedHeader(_))));
        assert!(matches!(parse_pgm(b"P5\n2 2\n"), Err(DataIoError::MalformedHeader(_))));
        assert!(matches!(parse_pgm(b"P5\n2 2\n65535\n"), Err(DataIoError::UnsupportedMaxval(65535))));
        let mut short = pgm_bytes(4, 4, &[1; 16]);
        short.truncate(short.len() - 3);
        match parse_pgm(&short) {
            Err(e @ DataIoError::Truncated { offset: 11, expected: 16, .. }) => {
                assert!(e.to_string().contains("byte offset 11"));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn store_unit_range_and_constant() {
        let dir = tempfile::tempdir().unwrap();
        let img = Image2D::from_fn(8, 8, |r, c| (r * 8 + c) as f64 / 63.0).unwrap();
        let path = dir.path().join("ramp.pgm");
        let sidecar = store_pgm(&img, &path).unwrap();
        assert_eq!(sidecar, dir.path().join("ramp.pgm.json"));
        let raster = parse_pgm(&fs::read(&path).unwrap()).unwrap().raster;
        for (b, v) in raster.iter().zip(img.pixels()) {
            assert_eq!(*b, (v * 255.0).round_ties_even() as u8);
        }
        let back = load_pgm(&path).unwrap();
        for (a, b) in back.pixels().iter().zip(img.pixels()) {
            assert!((a - b).abs() <= 0.5 / 255.0 + 1e-15);
        }

        let flat = Image2D::filled(8, 8, 3.7).unwrap();
        let path = dir.path().join("flat.pgm");
        let sidecar = store_pgm(&flat, &path).unwrap();
        assert!(parse_pgm(&fs::read(&path).unwrap()).unwrap().raster.iter().all(|&b| b == 128));
        let map: QuantizationMap = serde_json::from_slice(&fs::read(sidecar).unwrap()).unwrap();
        assert_eq!(map.degenerate_value, Some(128));
        assert_eq!(map.source_min, 3.7);
    }

    #[test]
    fn round_ties_to_even() {
        let map = QuantizationMap {
            source_min: 0.0,
            source_max: 255.0,
            scale: 1.0,
            degenerate_value: None,
        };
        assert_eq!(map.quantize(0.5), 0);
        assert_eq!(map.quantize(1.5), 2);
        assert_eq!(map.quantize(2.5), 2);
    }

    proptest! {
        #[test]
        fn quantized_images_round_trip(raster in proptest::collection::vec(any::<u8>(), 64)) {
            let mut raster = raster;
            raster[0] = 0;
            raster[1] = 255;
            let img = PgmImage { width: 8, height: 8, raster: raster.clone() }.to_image().unwrap();
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("x.pgm");
            store_pgm(&img, &path).unwrap();
            prop_assert_eq!(load_pgm(&path).unwrap(), img);
        }
    }

    #[test]
    fn csv_header_only_and_lossless_floats() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.csv");
        write_long_csv(&[], &path).unwrap();
        assert_eq!(
            fs::read_to_string(&path).unwrap(),
            "experiment,aberration,strength,sigma,masked,n_or_metric,value\n"
        );

        let row = LongRow {
            experiment: "mtf_dist".into(),
            aberration: "sphere".into(),
            strength: 5.0,
            sigma: 0.0,
            masked: true,
            n_or_metric: "mean@1".into(),
            value: 1.0 / 3.0,
        };
        let path = dir.path().join("one.csv");
        write_long_csv(&[row], &path).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        let last = text.lines().nth(1).unwrap().rsplit(',').next().unwrap();
        assert_eq!(last.parse::<f64>().unwrap().to_bits(), (1.0f64 / 3.0).to_bits());
    }

    proptest! {
        #[test]
        fn float_text_round_trips(v in any::<f64>().prop_filter("finite", |v| v.is_finite())) {
            prop_assert_eq!(format_float(v).parse::<f64>().unwrap().to_bits(), v.to_bits());
        }
    }

    #[test]
    fn json_is_stable_and_lossless() {
        let dir = tempfile::tempdir().unwrap();
        let mut inner = BTreeMap::new();
        inner.insert("zeta", vec![1.0 / 3.0, 0.1]);
        inner.insert("alpha", vec![2.0f64.sqrt()]);
        let mut outer = BTreeMap::new();
        outer.insert("b", inner.clone());
        outer.insert("a", inner);
        let (p1, p2) = (dir.path().join("1.json"), dir.path().join("2.json"));
        write_json(&outer, &p1).unwrap();
        write_json(&outer, &p2).unwrap();
        let text = fs::read_to_string(&p1).unwrap();
        assert_eq!(text, fs::read_to_string(&p2).unwrap());
        assert!(text.find("\"a\"").unwrap() < text.find("\"b\"").unwrap());
        let back: BTreeMap<String, BTreeMap<String, Vec<f64>>> = serde_json::from_str(&text).unwrap();
        assert_eq!(back["a"]["zeta"][0].to_bits(), (1.0f64 / 3.0).to_bits());
    }

    #[test]
    fn unwritable_path_is_io_error() {
        let img = Image2D::filled(8, 8, 0.0).unwrap();
        let err = store_pgm(&img, "/nonexistent-dir/x.pgm").unwrap_err();
        assert!(matches!(err, DataIoError::Io { .. }));
    }
}
