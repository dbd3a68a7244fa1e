//! Pupil functions, Seidel aberration profiles and random phase masks.
//!
//! One-dimensional pupils are periodic sequences of length `N` (even) whose
//! aperture covers the first `N/2` samples. The two-dimensional aperture is
//! the disk inscribed in a square grid.

use rand::Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::{PI, TAU};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OpticsError {
    #[error("period must be even and at least 4, got {0}")]
    InvalidPeriod(usize),
    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("grid side must be at least 8, got {0}")]
    GridTooSmall(usize),
    #[error("Bernoulli probability must lie in [0, 1], got {0}")]
    InvalidProbability(f64),
    #[error("non-finite phase value at index {0}")]
    NonFinitePhase(usize),
}

pub type Result<T> = std::result::Result<T, OpticsError>;

pub(crate) fn check_period(n: usize) -> Result<()> {
    if n < 4 || !n.is_multiple_of(2) {
        return Err(OpticsError::InvalidPeriod(n));
    }
    Ok(())
}

/// Number of samples inside the 1-D aperture, `⌊N/2⌋`.
pub fn aperture_len(period: usize) -> usize {
    period / 2
}

/// A sampled pupil `A_n·exp(iφ_n)` with the half-period rectangular aperture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PupilFunction {
    amplitude: Vec<f64>,
    phase: Vec<f64>,
}

impl PupilFunction {
    pub fn new(period: usize, phase: Vec<f64>) -> Result<Self> {
        check_period(period)?;
        if phase.len() != period {
            return Err(OpticsError::LengthMismatch {
                expected: period,
                actual: phase.len(),
            });
        }
        if let Some(i) = phase.iter().position(|p| !p.is_finite()) {
            return Err(OpticsError::NonFinitePhase(i));
        }
        let support = aperture_len(period);
        let amplitude = (0..period)
            .map(|n| if n < support { 1.0 } else { 0.0 })
            .collect();
        Ok(Self { amplitude, phase })
    }

    /// The diffraction-limited pupil (all phases zero).
    pub fn aberration_free(period: usize) -> Result<Self> {
        Self::new(period, vec![0.0; period])
    }

    pub fn period(&self) -> usize {
        self.phase.len()
    }

    pub fn support_len(&self) -> usize {
        aperture_len(self.period())
    }

    pub fn amplitude(&self) -> &[f64] {
        &self.amplitude
    }

    pub fn phase(&self) -> &[f64] {
        &self.phase
    }
}

/// Build a pupil from a phase sequence.
pub fn make_pupil(period: usize, phase: &[f64]) -> Result<PupilFunction> {
    PupilFunction::new(period, phase.to_vec())
}

/// Distribution of the per-sample mask phase.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MaskSpec {
    /// `W ~ Unif[0, 2π)`.
    #[default]
    Uniform,
    /// `W = π·B` with `B ~ Bern(p)`.
    Bernoulli { p: f64 },
}

impl MaskSpec {
    pub fn bernoulli(p: f64) -> Result<Self> {
        let spec = MaskSpec::Bernoulli { p };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            MaskSpec::Uniform => Ok(()),
            MaskSpec::Bernoulli { p } if (0.0..=1.0).contains(&p) => Ok(()),
            MaskSpec::Bernoulli { p } => Err(OpticsError::InvalidProbability(p)),
        }
    }

    pub fn label(&self) -> String {
        match self {
            MaskSpec::Uniform => "uniform".to_string(),
            MaskSpec::Bernoulli { p } => format!("bernoulli_{p}"),
        }
    }
}

/// One realized mask phase sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskSample {
    pub phases: Vec<f64>,
}

impl MaskSample {
    pub fn zeros(len: usize) -> Self {
        Self {
            phases: vec![0.0; len],
        }
    }

    pub fn len(&self) -> usize {
        self.phases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phases.is_empty()
    }
}

/// Draw `len` i.i.d. mask phases. Only the supplied stream is mutated.
pub fn sample_mask<R: Rng + ?Sized>(spec: MaskSpec, len: usize, rng: &mut R) -> Result<MaskSample> {
    spec.validate()?;
    let phases = match spec {
        MaskSpec::Uniform => (0..len).map(|_| rng.random_range(0.0..TAU)).collect(),
        MaskSpec::Bernoulli { p } => (0..len)
            .map(|_| if rng.random_bool(p) { PI } else { 0.0 })
            .collect(),
    };
    Ok(MaskSample { phases })
}

/// Add the mask phase to the pupil phase; amplitude is unchanged.
pub fn apply_mask(pupil: &PupilFunction, mask: &MaskSample) -> Result<PupilFunction> {
    if mask.len() != pupil.period() {
        return Err(OpticsError::LengthMismatch {
            expected: pupil.period(),
            actual: mask.len(),
        });
    }
    let phase = pupil
        .phase
        .iter()
        .zip(&mask.phases)
        .map(|(p, w)| p + w)
        .collect();
    Ok(PupilFunction {
        amplitude: pupil.amplitude.clone(),
        phase,
    })
}

/// Seidel aberration strengths in radians of peak phase at the aperture edge.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SeidelCoefficients {
    pub sphere: f64,
    pub coma: f64,
    pub astigmatism: f64,
    pub defocus: f64,
    pub tilt: f64,
}

impl SeidelCoefficients {
    pub fn sphere(v: f64) -> Self {
        Self { sphere: v, ..Self::default() }
    }

    pub fn coma(v: f64) -> Self {
        Self { coma: v, ..Self::default() }
    }

    pub fn astigmatism(v: f64) -> Self {
        Self { astigmatism: v, ..Self::default() }
    }

    pub fn defocus(v: f64) -> Self {
        Self { defocus: v, ..Self::default() }
    }

    pub fn tilt(v: f64) -> Self {
        Self { tilt: v, ..Self::default() }
    }

    pub fn is_finite(&self) -> bool {
        [self.sphere, self.coma, self.astigmatism, self.defocus, self.tilt]
            .iter()
            .all(|c| c.is_finite())
    }

    /// Phase at normalized polar pupil coordinates, θ measured from the x axis.
    pub fn polar(&self, rho: f64, theta: f64) -> f64 {
        self.cartesian(rho * theta.cos(), rho * theta.sin())
    }

    /// Phase at normalized Cartesian pupil coordinates.
    pub fn cartesian(&self, x: f64, y: f64) -> f64 {
        let rho2 = x * x + y * y;
        self.sphere * rho2 * rho2
            + self.coma * rho2 * x
            + self.astigmatism * x * x
            + self.defocus * rho2
            + self.tilt * x
    }

    /// Radial restriction of the 2-D expansion to the line y = 0.
    pub fn radial(&self, x: f64) -> f64 {
        let x2 = x * x;
        self.sphere * x2 * x2
            + self.coma * x2 * x
            + (self.astigmatism + self.defocus) * x2
            + self.tilt * x
    }
}

/// Normalized aperture coordinate of sample `n` for an aperture of `support` samples.
///
/// Maps the first aperture sample to -1 and the last to +1.
pub fn pupil_coordinate(n: usize, support: usize) -> f64 {
    let c = (support as f64 - 1.0) / 2.0;
    (n as f64 - c) / c
}

/// Seidel phase over the 1-D aperture; zero outside the support.
pub fn seidel_phase_1d(coeffs: &SeidelCoefficients, period: usize) -> Result<Vec<f64>> {
    check_period(period)?;
    let support = aperture_len(period);
    Ok((0..period)
        .map(|n| {
            if n < support {
                coeffs.radial(pupil_coordinate(n, support))
            } else {
                0.0
            }
        })
        .collect())
}

/// Row-major square grid of reals.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub side: usize,
    pub values: Vec<f64>,
}

impl Grid {
    pub fn zeros(side: usize) -> Self {
        Self {
            side,
            values: vec![0.0; side * side],
        }
    }

    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.side + col]
    }
}

/// Normalized coordinates `(x, y)` of pixel `(row, col)` relative to the disk
/// inscribed in a `side × side` grid. The disk has radius `side/2` and is
/// centered between the middle pixels, so the grid is symmetric under
/// `(row, col) -> (side-1-row, side-1-col)`.
pub fn disk_coordinates(row: usize, col: usize, side: usize) -> (f64, f64) {
    let c = (side as f64 - 1.0) / 2.0;
    let r = side as f64 / 2.0;
    ((col as f64 - c) / r, (row as f64 - c) / r)
}

/// Disk aperture (1 inside, 0 outside) inscribed in a `side × side` grid.
pub fn disk_aperture(side: usize) -> Result<Grid> {
    if side < 8 {
        return Err(OpticsError::GridTooSmall(side));
    }
    let mut g = Grid::zeros(side);
    for row in 0..side {
        for col in 0..side {
            let (x, y) = disk_coordinates(row, col, side);
            if x * x + y * y <= 1.0 {
                g.values[row * side + col] = 1.0;
            }
        }
    }
    Ok(g)
}

/// Seidel phase on the inscribed unit disk; zero outside it.
pub fn seidel_phase_2d(coeffs: &SeidelCoefficients, side: usize) -> Result<Grid> {
    if side < 8 {
        return Err(OpticsError::GridTooSmall(side));
    }
    let mut g = Grid::zeros(side);
    for row in 0..side {
        for col in 0..side {
            let (x, y) = disk_coordinates(row, col, side);
            if x * x + y * y <= 1.0 {
                g.values[row * side + col] = coeffs.cartesian(x, y);
            }
        }
    }
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rand_stats::{stream, StreamKey};
    use approx::assert_abs_diff_eq;

    #[test]
    fn make_pupil_applies_half_aperture() {
        let p = make_pupil(8, &[0.0; 8]).unwrap();
        assert_eq!(p.amplitude(), &[1.0, 1.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0]);
        assert!(p.phase().iter().all(|&v| v == 0.0));

        let ramp: Vec<f64> = (0..8).map(|n| 0.3 * n as f64).collect();
        let p = make_pupil(8, &ramp).unwrap();
        assert_eq!(p.phase(), ramp.as_slice());
    }

    #[test]
    fn make_pupil_rejects_bad_period() {
        assert_eq!(make_pupil(7, &[0.0; 7]), Err(OpticsError::InvalidPeriod(7)));
        assert_eq!(make_pupil(2, &[0.0; 2]), Err(OpticsError::InvalidPeriod(2)));
        assert!(matches!(
            make_pupil(8, &[0.0; 6]),
            Err(OpticsError::LengthMismatch { expected: 8, actual: 6 })
        ));
        assert!(matches!(
            make_pupil(4, &[0.0, f64::NAN, 0.0, 0.0]),
            Err(OpticsError::NonFinitePhase(1))
        ));
    }

    #[test]
    fn seidel_1d_zero_and_sphere() {
        let zero = seidel_phase_1d(&SeidelCoefficients::default(), 8).unwrap();
        assert_eq!(zero, vec![0.0; 8]);

        // N = 8: support 4, x = -1, -1/3, 1/3, 1.
        let s = seidel_phase_1d(&SeidelCoefficients::sphere(1.0), 8).unwrap();
        let expected = [1.0, 1.0 / 81.0, 1.0 / 81.0, 1.0, 0.0, 0.0, 0.0, 0.0];
        for (a, b) in s.iter().zip(expected) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-15);
        }
    }

    #[test]
    fn seidel_1d_tilt_is_antisymmetric_ramp() {
        let t = seidel_phase_1d(&SeidelCoefficients::tilt(PI), 8).unwrap();
        assert_abs_diff_eq!(t[0], -PI, epsilon = 1e-15);
        assert_abs_diff_eq!(t[1], -PI / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(t[2], PI / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(t[3], PI, epsilon = 1e-15);
        assert!(t[4..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn seidel_1d_rejects_odd_period() {
        assert!(seidel_phase_1d(&SeidelCoefficients::default(), 9).is_err());
    }

    #[test]
    fn seidel_2d_edge_values() {
        let zero = seidel_phase_2d(&SeidelCoefficients::default(), 32).unwrap();
        assert!(zero.values.iter().all(|&v| v == 0.0));

        assert_abs_diff_eq!(SeidelCoefficients::defocus(1.0).polar(1.0, 0.7), 1.0, epsilon = 1e-15);
        let astig = SeidelCoefficients::astigmatism(1.0);
        assert_abs_diff_eq!(astig.polar(1.0, 0.0), 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(astig.polar(1.0, PI / 2.0), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn seidel_2d_defocus_is_rotationally_symmetric() {
        let side = 32;
        let g = seidel_phase_2d(&SeidelCoefficients::defocus(1.0), side).unwrap();
        // 90° rotation of the grid: (r, c) -> (c, side-1-r).
        for r in 0..side {
            for c in 0..side {
                assert_abs_diff_eq!(g.at(r, c), g.at(c, side - 1 - r), epsilon = 1e-14);
            }
        }
        let max = g.values.iter().cloned().fold(f64::MIN, f64::max);
        assert!(max <= 1.0 && max > 0.9);
    }

    #[test]
    fn seidel_2d_rejects_small_grid() {
        assert_eq!(
            seidel_phase_2d(&SeidelCoefficients::default(), 7),
            Err(OpticsError::GridTooSmall(7))
        );
    }

    #[test]
    fn seidel_2d_even_terms_are_point_symmetric() {
        let side = 24;
        let c = SeidelCoefficients {
            sphere: 1.3,
            astigmatism: -0.7,
            defocus: 2.1,
            ..Default::default()
        };
        let g = seidel_phase_2d(&c, side).unwrap();
        for r in 0..side {
            for col in 0..side {
                assert_eq!(g.at(r, col), g.at(side - 1 - r, side - 1 - col));
            }
        }
    }

    #[test]
    fn seidel_is_linear_in_coefficients() {
        let a = SeidelCoefficients { sphere: 0.4, coma: -1.2, astigmatism: 0.3, defocus: 2.0, tilt: 0.9 };
        let b = SeidelCoefficients { sphere: -2.0, coma: 0.5, astigmatism: 1.1, defocus: -0.2, tilt: 3.0 };
        let sum = SeidelCoefficients {
            sphere: a.sphere + b.sphere,
            coma: a.coma + b.coma,
            astigmatism: a.astigmatism + b.astigmatism,
            defocus: a.defocus + b.defocus,
            tilt: a.tilt + b.tilt,
        };
        let (pa, pb, ps) = (
            seidel_phase_1d(&a, 16).unwrap(),
            seidel_phase_1d(&b, 16).unwrap(),
            seidel_phase_1d(&sum, 16).unwrap(),
        );
        for i in 0..16 {
            assert_abs_diff_eq!(ps[i], pa[i] + pb[i], epsilon = 1e-13);
        }
        let (ga, gb, gs) = (
            seidel_phase_2d(&a, 16).unwrap(),
            seidel_phase_2d(&b, 16).unwrap(),
            seidel_phase_2d(&sum, 16).unwrap(),
        );
        for i in 0..256 {
            assert_abs_diff_eq!(gs.values[i], ga.values[i] + gb.values[i], epsilon = 1e-13);
        }
    }

    #[test]
    fn degenerate_bernoulli_masks() {
        let mut rng = stream(StreamKey::new(3, 0));
        let m = sample_mask(MaskSpec::bernoulli(0.0).unwrap(), 8, &mut rng).unwrap();
        assert_eq!(m.phases, vec![0.0; 8]);
        let m = sample_mask(MaskSpec::bernoulli(1.0).unwrap(), 8, &mut rng).unwrap();
        assert_eq!(m.phases, vec![PI; 8]);
        assert!(MaskSpec::bernoulli(1.5).is_err());
        assert!(sample_mask(MaskSpec::Bernoulli { p: -0.1 }, 8, &mut rng).is_err());
    }

    #[test]
    fn uniform_mask_moments() {
        let k = 100_000;
        let mut rng = stream(StreamKey::new(11, 0));
        let m = sample_mask(MaskSpec::Uniform, k, &mut rng).unwrap();
        assert!(m.phases.iter().all(|&w| (0.0..TAU).contains(&w)));
        let kf = k as f64;
        let mean = m.phases.iter().sum::<f64>() / kf;
        let var = m.phases.iter().map(|w| (w - mean).powi(2)).sum::<f64>() / (kf - 1.0);
        let true_var = TAU * TAU / 12.0;
        // Sample-variance stderr from the fourth central moment (2π)⁴/80.
        let mean_se = (true_var / kf).sqrt();
        let var_se = ((TAU.powi(4) / 80.0 - true_var * true_var) / kf).sqrt();
        assert!((mean - PI).abs() < 3.0 * mean_se, "mean {mean}");
        assert!((var - true_var).abs() < 3.0 * var_se, "var {var}");
    }

    #[test]
    fn fair_bernoulli_frequency() {
        let k = 100_000;
        let mut rng = stream(StreamKey::new(5, 9));
        let m = sample_mask(MaskSpec::bernoulli(0.5).unwrap(), k, &mut rng).unwrap();
        assert!(m.phases.iter().all(|&w| w == 0.0 || w == PI));
        let ones = m.phases.iter().filter(|&&w| w == PI).count() as f64 / k as f64;
        assert!((ones - 0.5).abs() < 3.0 * (0.25 / k as f64).sqrt());
    }

    #[test]
    fn apply_mask_shifts_phase() {
        let p = make_pupil(8, &[0.5; 8]).unwrap();
        let unchanged = apply_mask(&p, &MaskSample::zeros(8)).unwrap();
        assert_eq!(unchanged, p);
        let shifted = apply_mask(&p, &MaskSample { phases: vec![PI; 8] }).unwrap();
        assert!(shifted.phase().iter().all(|&v| v == 0.5 + PI));
        assert_eq!(shifted.amplitude(), p.amplitude());
        assert!(apply_mask(&p, &MaskSample::zeros(6)).is_err());
    }

    #[test]
    fn apply_mask_is_additive() {
        let mut rng = stream(StreamKey::new(1, 2));
        let phase = seidel_phase_1d(&SeidelCoefficients::coma(2.0), 16).unwrap();
        let p = make_pupil(16, &phase).unwrap();
        let w1 = sample_mask(MaskSpec::Uniform, 16, &mut rng).unwrap();
        let w2 = sample_mask(MaskSpec::Uniform, 16, &mut rng).unwrap();
        let twice = apply_mask(&apply_mask(&p, &w1).unwrap(), &w2).unwrap();
        for i in 0..16 {
            assert_eq!(twice.phase()[i], p.phase()[i] + w1.phases[i] + w2.phases[i]);
        }
    }
}
