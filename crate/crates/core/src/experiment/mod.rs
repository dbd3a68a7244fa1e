//! Config-driven experiment runs: MTF distribution studies, the theory
//! verification suite and reconstruction sweeps.
//!
//! A run is a pure function of its [`ExperimentConfig`]: every random draw
//! comes from a substream keyed by [`derive_seed`], and all files are written
//! in a fixed order after the parallel work completes.

mod mtf_dist;
mod recon;
pub mod theory;

use crate::data_io::{self, DataIoError};
use crate::imaging::{ImagingError, ReconSettings};
use crate::optics::{MaskSpec, OpticsError, SeidelCoefficients};
use crate::rand_stats::StatsError;
use crate::transfer::TheoryError;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::fs;
use std::path::{Path, PathBuf};
use thiserror::Error;

pub use mtf_dist::run_mtf_dist;
pub use recon::run_recon_sweep;
pub use recon::{load_scene, sweep_mask};
pub use theory::run_theory_check;

pub const TOOL_NAME: &str = env!("CARGO_PKG_NAME");
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");
const DEFAULT_OUTPUT_DIR: &str = "wavemask_output";

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid config field `{field}`: {reason}")]
    InvalidField { field: &'static str, reason: String },
    #[error("config kind is {actual:?}, this runner needs {expected:?}")]
    WrongKind { expected: ExperimentKind, actual: ExperimentKind },
    #[error("cannot parse config: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    DataIo(#[from] DataIoError),
    #[error(transparent)]
    Optics(#[from] OpticsError),
    #[error(transparent)]
    Theory(#[from] TheoryError),
    #[error(transparent)]
    Imaging(#[from] ImagingError),
    #[error(transparent)]
    Stats(#[from] StatsError),
}

pub type Result<T> = std::result::Result<T, ExperimentError>;

fn invalid(field: &'static str, reason: impl Into<String>) -> ExperimentError {
    ExperimentError::InvalidField { field, reason: reason.into() }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    MtfDist,
    TheoryCheck,
    ReconSweep,
}

/// Single-term Seidel aberration selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AberrationKind {
    None,
    Sphere,
    Coma,
    Astigmatism,
    Defocus,
    Tilt,
}

impl AberrationKind {
    pub fn coefficients(self, strength: f64) -> SeidelCoefficients {
        match self {
            AberrationKind::None => SeidelCoefficients::default(),
            AberrationKind::Sphere => SeidelCoefficients::sphere(strength),
            AberrationKind::Coma => SeidelCoefficients::coma(strength),
            AberrationKind::Astigmatism => SeidelCoefficients::astigmatism(strength),
            AberrationKind::Defocus => SeidelCoefficients::defocus(strength),
            AberrationKind::Tilt => SeidelCoefficients::tilt(strength),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            AberrationKind::None => "none",
            AberrationKind::Sphere => "sphere",
            AberrationKind::Coma => "coma",
            AberrationKind::Astigmatism => "astigmatism",
            AberrationKind::Defocus => "defocus",
            AberrationKind::Tilt => "tilt",
        }
    }
}

/// How the second-moment check scales the closed form. `Linear` multiplies
/// by `M` and exists as a negative control.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MomentNormalization {
    #[default]
    Quadratic,
    Linear,
}

/// Knobs for the theory verification suite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TheoryConfig {
    /// Periods used by the bound, expectation and hypercube-law checks.
    pub periods: Vec<usize>,
    pub alpha: f64,
    pub bound_profiles: usize,
    pub invariance_period: usize,
    pub invariance_strength: f64,
    pub equivalence_period: usize,
    pub ks_trials: usize,
    pub expectation_trials: usize,
    pub moment_periods: Vec<usize>,
    pub moment_probabilities: Vec<f64>,
    pub moment_trials: usize,
    pub moment_normalization: MomentNormalization,
    pub lemma_trials: usize,
    pub null_free_period: usize,
    /// Sphere strength for the null-free check; `None` scans for the weakest
    /// strength that produces enough near-nulls.
    pub null_free_strength: Option<f64>,
    pub null_free_trials: usize,
}

impl Default for TheoryConfig {
    fn default() -> Self {
        Self {
            periods: vec![8, 16, 64],
            alpha: 0.01,
            bound_profiles: 1000,
            invariance_period: 64,
            invariance_strength: 5.0,
            equivalence_period: 16,
            ks_trials: 10_000,
            expectation_trials: 1_000_000,
            moment_periods: vec![8, 16],
            moment_probabilities: vec![0.1, 0.25, 0.5],
            moment_trials: 100_000,
            moment_normalization: MomentNormalization::Quadratic,
            lemma_trials: 100_000,
            null_free_period: 64,
            null_free_strength: None,
            null_free_trials: 10_000,
        }
    }
}

fn default_period() -> usize {
    64
}
fn default_aberrations() -> Vec<AberrationKind> {
    vec![AberrationKind::Sphere, AberrationKind::Astigmatism]
}
fn default_strengths() -> Vec<f64> {
    vec![1.0, 5.0, 20.0]
}
fn default_trials() -> usize {
    10_000
}
fn default_sigmas() -> Vec<f64> {
    vec![1e-4, 3e-4, 1e-3]
}
fn default_recon() -> ReconSettings {
    ReconSettings::default()
}
fn default_true() -> bool {
    true
}

/// One run, as read from a JSON document. Everything except `kind` and
/// `master_seed` has a default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub master_seed: u64,
    /// Where outputs go. Not part of the run's identity: it is excluded
    /// from the config hash and from the manifest.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    #[serde(default = "default_period")]
    pub period: usize,
    #[serde(default = "default_aberrations")]
    pub aberrations: Vec<AberrationKind>,
    #[serde(default = "default_strengths")]
    pub strengths: Vec<f64>,
    #[serde(default)]
    pub mask: MaskSpec,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default = "default_sigmas")]
    pub sigmas: Vec<f64>,
    #[serde(default = "default_recon")]
    pub recon: ReconSettings,
    /// PGM scene for reconstruction sweeps; the bundled scene when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scene: Option<PathBuf>,
    #[serde(default = "default_true")]
    pub write_images: bool,
    #[serde(default)]
    pub theory: TheoryConfig,
}

impl ExperimentConfig {
    pub fn new(kind: ExperimentKind, master_seed: u64) -> Self {
        Self {
            kind,
            master_seed,
            output_dir: None,
            period: default_period(),
            aberrations: default_aberrations(),
            strengths: default_strengths(),
            mask: MaskSpec::default(),
            trials: default_trials(),
            sigmas: default_sigmas(),
            recon: default_recon(),
            scene: None,
            write_images: true,
            theory: TheoryConfig::default(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| ExperimentError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn output_dir(&self) -> PathBuf {
        self.output_dir.clone().unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT_DIR))
    }

    /// The config as recorded in manifests: everything but the output location.
    pub fn identity(&self) -> ExperimentConfig {
        ExperimentConfig { output_dir: None, ..self.clone() }
    }

    /// Hex SHA-256 of the compact JSON form of [`identity`](Self::identity).
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(&self.identity()).expect("config serializes");
        hex::encode(Sha256::digest(&bytes))
    }

    pub fn validate(&self) -> Result<()> {
        match self.kind {
            ExperimentKind::MtfDist => {
                check_period("period", self.period)?;
                self.check_aberration_grid()?;
                if self.trials == 0 {
                    return Err(invalid("trials", "must be at least 1"));
                }
                self.mask.validate().map_err(|e| invalid("mask", e.to_string()))?;
            }
            ExperimentKind::ReconSweep => {
                self.check_aberration_grid()?;
                nonempty("sigmas", &self.sigmas)?;
                if let Some(s) = self.sigmas.iter().find(|s| !(s.is_finite() && **s >= 0.0)) {
                    return Err(invalid("sigmas", format!("{s} is not a finite nonnegative number")));
                }
                self.mask.validate().map_err(|e| invalid("mask", e.to_string()))?;
                let r = &self.recon;
                if r.grid_side < crate::imaging::MIN_SIDE {
                    return Err(invalid("recon.grid_side", format!("must be at least {}", crate::imaging::MIN_SIDE)));
                }
                if r.pupil_diameter < crate::imaging::MIN_SIDE || r.pupil_diameter > r.grid_side {
                    return Err(invalid(
                        "recon.pupil_diameter",
                        format!("must lie in [{}, grid_side]", crate::imaging::MIN_SIDE),
                    ));
                }
                if !(r.psf_noise_scale.is_finite() && r.psf_noise_scale >= 0.0) {
                    return Err(invalid("recon.psf_noise_scale", "must be finite and nonnegative"));
                }
                if let Some(nsr) = r.nsr {
                    if !(nsr.is_finite() && nsr >= 0.0) {
                        return Err(invalid("recon.nsr", "must be finite and nonnegative"));
                    }
                }
            }
            ExperimentKind::TheoryCheck => self.theory.validate()?,
        }
        Ok(())
    }

    fn check_aberration_grid(&self) -> Result<()> {
        nonempty("aberrations", &self.aberrations)?;
        nonempty("strengths", &self.strengths)?;
        if let Some(s) = self.strengths.iter().find(|s| !s.is_finite()) {
            return Err(invalid("strengths", format!("{s} is not finite")));
        }
        Ok(())
    }

    pub(crate) fn expect_kind(&self, expected: ExperimentKind) -> Result<()> {
        if self.kind != expected {
            return Err(ExperimentError::WrongKind { expected, actual: self.kind });
        }
        self.validate()
    }
}

impl TheoryConfig {
    fn validate(&self) -> Result<()> {
        nonempty("theory.periods", &self.periods)?;
        for &p in &self.periods {
            check_period("theory.periods", p)?;
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(invalid("theory.alpha", "must lie in (0, 1)"));
        }
        check_period("theory.invariance_period", self.invariance_period)?;
        check_period("theory.equivalence_period", self.equivalence_period)?;
        check_period("theory.null_free_period", self.null_free_period)?;
        nonempty("theory.moment_periods", &self.moment_periods)?;
        for &p in &self.moment_periods {
            check_period("theory.moment_periods", p)?;
        }
        nonempty("theory.moment_probabilities", &self.moment_probabilities)?;
        if let Some(p) = self.moment_probabilities.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(invalid("theory.moment_probabilities", format!("{p} is outside [0, 1]")));
        }
        if !self.invariance_strength.is_finite() {
            return Err(invalid("theory.invariance_strength", "must be finite"));
        }
        if let Some(s) = self.null_free_strength {
            if !s.is_finite() {
                return Err(invalid("theory.null_free_strength", "must be finite"));
            }
        }
        for (field, v) in [
            ("theory.bound_profiles", self.bound_profiles),
            ("theory.ks_trials", self.ks_trials),
            ("theory.expectation_trials", self.expectation_trials),
            ("theory.moment_trials", self.moment_trials),
            ("theory.lemma_trials", self.lemma_trials),
            ("theory.null_free_trials", self.null_free_trials),
        ] {
            if v < 2 {
                return Err(invalid(field, "must be at least 2"));
            }
        }
        Ok(())
    }
}

fn nonempty<T>(field: &'static str, v: &[T]) -> Result<()> {
    if v.is_empty() {
        return Err(invalid(field, "must not be empty"));
    }
    Ok(())
}

fn check_period(field: &'static str, n: usize) -> Result<()> {
    crate::optics::check_period(n).map_err(|e| invalid(field, e.to_string()))
}

/// 53-bit substream seed for a named cell (exactly representable as `f64`,
/// so it survives the numeric CSV column).
pub fn derive_seed(master_seed: u64, tag: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(master_seed.to_le_bytes());
    h.update(tag.as_bytes());
    let d = h.finalize();
    let mut first = [0u8; 8];
    first.copy_from_slice(&d[..8]);
    u64::from_le_bytes(first) & ((1u64 << 53) - 1)
}

/// Outputs and substreams of one cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellRecord {
    pub id: String,
    /// Seed of the cell's substreams; trial `t` uses stream index `t`.
    pub stream_seed: u64,
    pub trials: u64,
    pub files: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckSummary {
    pub name: String,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub tool_version: String,
    pub config_hash: String,
    pub config: ExperimentConfig,
    pub cells: Vec<CellRecord>,
    /// Every file written by the run, relative to the output directory,
    /// sorted. The manifest itself is `manifest.json`.
    pub files: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub checks: Vec<CheckSummary>,
    #[serde(default, skip_serializing_if = "serde_json::Map::is_empty")]
    pub notes: serde_json::Map<String, serde_json::Value>,
}

impl RunManifest {
    pub(crate) fn new(config: &ExperimentConfig) -> Self {
        Self {
            tool: TOOL_NAME.to_string(),
            tool_version: TOOL_VERSION.to_string(),
            config_hash: config.hash(),
            config: config.identity(),
            cells: Vec::new(),
            files: Vec::new(),
            checks: Vec::new(),
            notes: serde_json::Map::new(),
        }
    }

    pub fn failed_checks(&self) -> Vec<&str> {
        self.checks.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect()
    }

    pub(crate) fn finish(mut self, out: &OutputDir) -> Result<Self> {
        let mut files = out.written.clone();
        files.sort();
        files.dedup();
        self.files = files;
        data_io::write_json(&self, out.root.join(MANIFEST_FILE))?;
        Ok(self)
    }
}

pub const MANIFEST_FILE: &str = "manifest.json";

/// Output directory that remembers every relative path written into it.
pub(crate) struct OutputDir {
    root: PathBuf,
    written: Vec<String>,
}

impl OutputDir {
    pub(crate) fn create(root: PathBuf) -> Result<Self> {
        fs::create_dir_all(&root).map_err(|source| ExperimentError::Io { path: root.clone(), source })?;
        Ok(Self { root, written: Vec::new() })
    }

    /// Absolute path for `rel`, creating parent directories and recording it.
    pub(crate) fn file(&mut self, rel: &str) -> Result<PathBuf> {
        let path = self.root.join(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|source| ExperimentError::Io {
                path: parent.to_path_buf(),
                source,
            })?;
        }
        self.written.push(rel.to_string());
        Ok(path)
    }

    /// Store a PGM plus its sidecar; returns both relative paths.
    pub(crate) fn pgm(&mut self, rel: &str, img: &crate::imaging::Image2D) -> Result<Vec<String>> {
        let path = self.file(rel)?;
        data_io::store_pgm(img, &path)?;
        let sidecar = format!("{rel}.json");
        self.written.push(sidecar.clone());
        Ok(vec![rel.to_string(), sidecar])
    }
}

/// Dispatch on the config's kind.
pub fn run(config: &ExperimentConfig) -> Result<RunManifest> {
    match config.kind {
        ExperimentKind::MtfDist => run_mtf_dist(config),
        ExperimentKind::TheoryCheck => run_theory_check(config),
        ExperimentKind::ReconSweep => run_recon_sweep(config),
    }
}

/// Absolute slack for comparing quantities that agree up to floating-point
/// rounding (e.g. MTF values at lags with a single contributing term).
pub const ROUNDING_SLACK: f64 = 1e-12;

/// Pooled z of two `(mean, stderr)` estimates after forgiving
/// [`ROUNDING_SLACK`] of the difference.
pub fn slack_z(a: (f64, f64), b: (f64, f64)) -> f64 {
    let d = ((a.0 - b.0).abs() - ROUNDING_SLACK).max(0.0);
    crate::rand_stats::pooled_z((d, a.1), (0.0, b.1))
}

/// Compact label for a number in file names and cell ids.
pub(crate) fn tag(v: f64) -> String {
    format!("{v}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_fill_in() {
        let cfg = ExperimentConfig::from_json(r#"{"kind": "mtf_dist", "master_seed": 3}"#).unwrap();
        assert_eq!(cfg, ExperimentConfig::new(ExperimentKind::MtfDist, 3));
        assert_eq!(cfg.mask, MaskSpec::Uniform);
    }

    #[test]
    fn config_round_trips() {
        let mut cfg = ExperimentConfig::new(ExperimentKind::ReconSweep, 11);
        cfg.output_dir = Some("out".into());
        cfg.mask = MaskSpec::Bernoulli { p: 0.5 };
        cfg.recon.nsr = Some(0.01);
        cfg.theory.null_free_strength = Some(113.5);
        let text = serde_json::to_string(&cfg).unwrap();
        assert_eq!(ExperimentConfig::from_json(&text).unwrap(), cfg);
    }

    #[test]
    fn hash_tracks_content_not_location() {
        let a = ExperimentConfig::new(ExperimentKind::MtfDist, 1);
        let mut b = a.clone();
        b.output_dir = Some("/elsewhere".into());
        assert_eq!(a.hash(), b.hash());
        b.trials = 7;
        assert_ne!(a.hash(), b.hash());
        let mut c = a.clone();
        c.master_seed = 2;
        assert_ne!(a.hash(), c.hash());
    }

    #[test]
    fn seed_is_required_and_unknown_fields_rejected() {
        assert!(matches!(
            ExperimentConfig::from_json(r#"{"kind": "mtf_dist"}"#),
            Err(ExperimentError::Parse(_))
        ));
        assert!(ExperimentConfig::from_json(r#"{"kind": "mtf_dist", "master_seed": 1, "trails": 5}"#).is_err());
    }

    #[test]
    fn invalid_fields_are_named() {
        let cases = [
            (r#"{"kind": "mtf_dist", "master_seed": 1, "period": 7}"#, "period"),
            (r#"{"kind": "mtf_dist", "master_seed": 1, "strengths": []}"#, "strengths"),
            (r#"{"kind": "mtf_dist", "master_seed": 1, "trials": 0}"#, "trials"),
            (r#"{"kind": "recon_sweep", "master_seed": 1, "sigmas": [-1.0]}"#, "sigmas"),
            (r#"{"kind": "recon_sweep", "master_seed": 1, "mask": {"kind": "bernoulli", "p": 2.0}}"#, "mask"),
            (r#"{"kind": "theory_check", "master_seed": 1, "theory": {"periods": [7]}}"#, "theory.periods"),
            (r#"{"kind": "theory_check", "master_seed": 1, "theory": {"alpha": 0.0}}"#, "theory.alpha"),
        ];
        for (text, field) in cases {
            match ExperimentConfig::from_json(text) {
                Err(ExperimentError::InvalidField { field: f, .. }) => assert_eq!(f, field, "{text}"),
                other => panic!("{text}: {other:?}"),
            }
        }
    }

    #[test]
    fn derived_seeds_are_distinct_and_exact_in_f64() {
        let a = derive_seed(1, "mask");
        let b = derive_seed(1, "noise");
        let c = derive_seed(2, "mask");
        assert!(a != b && a != c);
        for s in [a, b, c] {
            assert!(s < 1 << 53);
            assert_eq!(s as f64 as u64, s);
        }
        assert_eq!(derive_seed(1, "mask"), a);
    }
}
