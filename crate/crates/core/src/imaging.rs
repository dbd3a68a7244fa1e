//! Two-dimensional imaging: pupil → PSF → blurred, noisy measurement →
//! Wiener deconvolution → SSIM.
//!
//! PSFs are stored centered: the optical axis sits at pixel `(h/2, w/2)`.
//! All convolutions are circular and computed with the DFT.

use crate::fourier::{fftshift, ifftshift, to_complex, Fft2};
use crate::optics::{self, Grid, MaskSample, OpticsError, SeidelCoefficients};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Smallest image side accepted anywhere in the pipeline.
pub const MIN_SIDE: usize = 8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ImagingError {
    #[error(transparent)]
    Optics(#[from] OpticsError),
    #[error("image must be at least {MIN_SIDE}x{MIN_SIDE}, got {height}x{width}")]
    TooSmall { height: usize, width: usize },
    #[error("pixel buffer has {actual} entries, expected {expected}")]
    BufferLength { expected: usize, actual: usize },
    #[error("non-finite pixel at index {0}")]
    NonFinite(usize),
    #[error("shape mismatch: {0:?} vs {1:?}")]
    ShapeMismatch((usize, usize), (usize, usize)),
    #[error("PSF has a negative entry at index {0}")]
    NegativePsf(usize),
    #[error("PSF must have positive total energy")]
    ZeroEnergy,
    #[error("noise sigma must be finite and nonnegative, got {0}")]
    InvalidSigma(f64),
    #[error("noise-to-signal ratio must be finite and nonnegative, got {0}")]
    InvalidNsr(f64),
    #[error("inverse filter undefined: transfer function is exactly zero at frequency (row {row}, col {col}) and nsr = 0")]
    NullFrequency { row: usize, col: usize },
    #[error("pupil diameter {diameter} must be between {MIN_SIDE} and the grid side {side}")]
    InvalidPupilDiameter { diameter: usize, side: usize },
}

pub type Result<T> = std::result::Result<T, ImagingError>;

/// Row-major real image.
#[derive(Debug, Clone, PartialEq)]
pub struct Image2D {
    height: usize,
    width: usize,
    pixels: Vec<f64>,
}

impl Image2D {
    pub fn new(height: usize, width: usize, pixels: Vec<f64>) -> Result<Self> {
        if height < MIN_SIDE || width < MIN_SIDE {
            return Err(ImagingError::TooSmall { height, width });
        }
        if pixels.len() != height * width {
            return Err(ImagingError::BufferLength {
                expected: height * width,
                actual: pixels.len(),
            });
        }
        if let Some(i) = pixels.iter().position(|v| !v.is_finite()) {
            return Err(ImagingError::NonFinite(i));
        }
        Ok(Self { height, width, pixels })
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Result<Self> {
        Self::new(height, width, vec![value; height * width])
    }

    pub fn from_fn(height: usize, width: usize, f: impl Fn(usize, usize) -> f64) -> Result<Self> {
        let mut pixels = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                pixels.push(f(r, c));
            }
        }
        Self::new(height, width, pixels)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.pixels[row * self.width + col]
    }

    pub fn mean(&self) -> f64 {
        self.pixels.iter().sum::<f64>() / self.pixels.len() as f64
    }

    /// Mean squared pixel value.
    pub fn power(&self) -> f64 {
        self.pixels.iter().map(|v| v * v).sum::<f64>() / self.pixels.len() as f64
    }

    pub fn min(&self) -> f64 {
        self.pixels.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.pixels.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::new(self.height, self.width, self.pixels.iter().map(|&v| f(v)).collect())
    }

    /// Bilinear resampling onto a `height × width` grid (pixel-center aligned).
    pub fn resample(&self, height: usize, width: usize) -> Result<Self> {
        if (height, width) == self.shape() {
            return Ok(self.clone());
        }
        let sy = self.height as f64 / height as f64;
        let sx = self.width as f64 / width as f64;
        Self::from_fn(height, width, |r, c| {
            let y = ((r as f64 + 0.5) * sy - 0.5).clamp(0.0, (self.height - 1) as f64);
            let x = ((c as f64 + 0.5) * sx - 0.5).clamp(0.0, (self.width - 1) as f64);
            let (y0, x0) = (y.floor() as usize, x.floor() as usize);
            let (y1, x1) = ((y0 + 1).min(self.height - 1), (x0 + 1).min(self.width - 1));
            let (fy, fx) = (y - y0 as f64, x - x0 as f64);
            let top = self.get(y0, x0) * (1.0 - fx) + self.get(y0, x1) * fx;
            let bottom = self.get(y1, x0) * (1.0 - fx) + self.get(y1, x1) * fx;
            top * (1.0 - fy) + bottom * fy
        })
    }

    fn check_same_shape(&self, other: &Image2D) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(ImagingError::ShapeMismatch(self.shape(), other.shape()));
        }
        Ok(())
    }
}

/// Centered, nonnegative, unit-sum point spread function.
#[derive(Debug, Clone, PartialEq)]
pub struct Psf2D(Image2D);

impl Psf2D {
    /// Validate nonnegativity and rescale to unit sum.
    pub fn normalized(image: Image2D) -> Result<Self> {
        if let Some(i) = image.pixels.iter().position(|&v| v < 0.0) {
            return Err(ImagingError::NegativePsf(i));
        }
        let total: f64 = image.pixels.iter().sum();
        if total <= 0.0 {
            return Err(ImagingError::ZeroEnergy);
        }
        image.map(|v| v / total).map(Psf2D)
    }

    /// Unit impulse at the center pixel.
    pub fn delta(height: usize, width: usize) -> Result<Self> {
        let mut img = Image2D::filled(height, width, 0.0)?;
        img.pixels[(height / 2) * width + width / 2] = 1.0;
        Ok(Psf2D(img))
    }

    pub fn image(&self) -> &Image2D {
        &self.0
    }

    pub fn into_image(self) -> Image2D {
        self.0
    }

    pub fn peak(&self) -> f64 {
        self.0.max()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub sigma: f64,
}

/// `|centered DFT(A·e^{iφ})|²`, normalized to unit sum.
pub fn psf_from_pupil_2d(amplitude: &Grid, phase: &Grid) -> Result<Psf2D> {
    if amplitude.side != phase.side {
        return Err(ImagingError::ShapeMismatch(
            (amplitude.side, amplitude.side),
            (phase.side, phase.side),
        ));
    }
    let side = amplitude.side;
    let mut field: Vec<Complex64> = amplitude
        .values
        .iter()
        .zip(&phase.values)
        .map(|(&a, &p)| Complex64::from_polar(a, p))
        .collect();
    Fft2::new(side, side).forward(&mut field);
    let intensity: Vec<f64> = field.iter().map(|v| v.norm_sqr()).collect();
    Psf2D::normalized(Image2D::new(side, side, fftshift(&intensity, side, side))?)
}

/// DFT of a centered kernel (origin moved to index 0 first).
pub fn transfer_function(kernel: &Image2D) -> Vec<Complex64> {
    let (h, w) = kernel.shape();
    let mut buf = to_complex(&ifftshift(&kernel.pixels, h, w));
    Fft2::new(h, w).forward(&mut buf);
    buf
}

/// `|OTF|` normalized by its DC value, laid out with DC at index 0.
pub fn mtf_2d(psf: &Psf2D) -> Vec<f64> {
    let otf = transfer_function(psf.image());
    let dc = otf[0].norm();
    otf.iter().map(|v| v.norm() / dc).collect()
}

fn real_part(height: usize, width: usize, buf: &[Complex64]) -> Result<Image2D> {
    Image2D::new(height, width, buf.iter().map(|v| v.re).collect())
}

/// Circular convolution of `scene` with the centered kernel `psf`.
pub fn convolve_2d(scene: &Image2D, psf: &Psf2D) -> Result<Image2D> {
    scene.check_same_shape(psf.image())?;
    let (h, w) = scene.shape();
    let plan = Fft2::new(h, w);
    let otf = transfer_function(psf.image());
    let mut buf = to_complex(&scene.pixels);
    plan.forward(&mut buf);
    for (y, k) in buf.iter_mut().zip(&otf) {
        *y *= k;
    }
    plan.inverse(&mut buf);
    real_part(h, w, &buf)
}

/// Add i.i.d. `N(0, σ²)` to every pixel. No clipping. One normal draw is
/// consumed per pixel even when `σ = 0`.
pub fn add_gaussian_noise<R: Rng + ?Sized>(img: &Image2D, spec: NoiseSpec, rng: &mut R) -> Result<Image2D> {
    if !(spec.sigma >= 0.0 && spec.sigma.is_finite()) {
        return Err(ImagingError::InvalidSigma(spec.sigma));
    }
    let pixels = img
        .pixels
        .iter()
        .map(|&v| {
            let z: f64 = rng.sample(StandardNormal);
            v + spec.sigma * z
        })
        .collect();
    Image2D::new(img.height, img.width, pixels)
}

/// Wiener estimate `X = Y·H*/(|H|² + nsr)` with `H` the transfer function of
/// the centered kernel. The kernel may be a noisy PSF estimate.
pub fn wiener_deconvolve(measurement: &Image2D, kernel: &Image2D, nsr: f64) -> Result<Image2D> {
    if !(nsr >= 0.0 && nsr.is_finite()) {
        return Err(ImagingError::InvalidNsr(nsr));
    }
    measurement.check_same_shape(kernel)?;
    let (h, w) = measurement.shape();
    let otf = transfer_function(kernel);
    if nsr == 0.0 {
        if let Some(i) = otf.iter().position(|v| v.norm_sqr() == 0.0) {
            return Err(ImagingError::NullFrequency { row: i / w, col: i % w });
        }
    }
    let plan = Fft2::new(h, w);
    let mut buf = to_complex(&measurement.pixels);
    plan.forward(&mut buf);
    for (y, k) in buf.iter_mut().zip(&otf) {
        *y = *y * k.conj() / (k.norm_sqr() + nsr);
    }
    plan.inverse(&mut buf);
    real_part(h, w, &buf)
}

/// SSIM window side (uniform weights, stride 1, no padding).
pub const SSIM_WINDOW: usize = 8;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

/// Summed-area table with a zero first row and column.
fn integral(values: &[f64], h: usize, w: usize) -> Vec<f64> {
    let mut t = vec![0.0; (h + 1) * (w + 1)];
    for r in 0..h {
        let mut row_sum = 0.0;
        for c in 0..w {
            row_sum += values[r * w + c];
            t[(r + 1) * (w + 1) + c + 1] = t[r * (w + 1) + c + 1] + row_sum;
        }
    }
    t
}

fn window_sum(t: &[f64], w: usize, r: usize, c: usize, k: usize) -> f64 {
    let s = w + 1;
    t[(r + k) * s + c + k] - t[r * s + c + k] - t[(r + k) * s + c] + t[r * s + c]
}

/// Mean structural similarity of `b` against the reference `a`.
///
/// Both images go through the same affine map taking `[min a, max a]` onto
/// `[0, 1]` (identity when `a` is constant); the dynamic range is then
/// `L = 1`, `C1 = (0.01 L)²`, `C2 = (0.03 L)²`. Values of `b` outside the
/// reference range are kept.
pub fn ssim(a: &Image2D, b: &Image2D) -> Result<f64> {
    a.check_same_shape(b)?;
    let (lo, hi) = (a.min(), a.max());
    let (offset, scale) = if hi > lo { (lo, 1.0 / (hi - lo)) } else { (0.0, 1.0) };
    let x: Vec<f64> = a.pixels.iter().map(|v| (v - offset) * scale).collect();
    let y: Vec<f64> = b.pixels.iter().map(|v| (v - offset) * scale).collect();
    let (h, w) = a.shape();
    let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = x.iter().zip(&y).map(|(p, q)| p * q).collect();
    let (tx, ty, txx, tyy, txy) = (
        integral(&x, h, w),
        integral(&y, h, w),
        integral(&xx, h, w),
        integral(&yy, h, w),
        integral(&xy, h, w),
    );
    let k = SSIM_WINDOW;
    let n = (k * k) as f64;
    let c1 = SSIM_K1 * SSIM_K1;
    let c2 = SSIM_K2 * SSIM_K2;
    let mut total = 0.0;
    let mut count = 0usize;
    for r in 0..=(h - k) {
        for c in 0..=(w - k) {
            let mx = window_sum(&tx, w, r, c, k) / n;
            let my = window_sum(&ty, w, r, c, k) / n;
            let vx = (window_sum(&txx, w, r, c, k) / n - mx * mx).max(0.0);
            let vy = (window_sum(&tyy, w, r, c, k) / n - my * my).max(0.0);
            let cxy = window_sum(&txy, w, r, c, k) / n - mx * my;
            total += ((2.0 * mx * my + c1) * (2.0 * cxy + c2))
                / ((mx * mx + my * my + c1) * (vx + vy + c2));
            count += 1;
        }
    }
    Ok(total / count as f64)
}

/// Pupil-plane amplitude and phase: a Seidel-aberrated disk of `diameter`
/// pixels centered in a `side × side` grid.
pub fn embedded_pupil(coeffs: &SeidelCoefficients, side: usize, diameter: usize) -> Result<(Grid, Grid)> {
    if diameter < MIN_SIDE || diameter > side {
        return Err(ImagingError::InvalidPupilDiameter { diameter, side });
    }
    let disk = optics::disk_aperture(diameter)?;
    let phase = optics::seidel_phase_2d(coeffs, diameter)?;
    let offset = (side - diameter) / 2;
    let mut amp = Grid::zeros(side);
    let mut phi = Grid::zeros(side);
    for r in 0..diameter {
        for c in 0..diameter {
            let dst = (r + offset) * side + c + offset;
            amp.values[dst] = disk.at(r, c);
            phi.values[dst] = phase.at(r, c);
        }
    }
    Ok((amp, phi))
}

/// Add a realized mask (one phase per grid pixel) to a pupil phase grid.
pub fn mask_phase_grid(phase: &Grid, mask: &MaskSample) -> Result<Grid> {
    if mask.len() != phase.values.len() {
        return Err(OpticsError::LengthMismatch {
            expected: phase.values.len(),
            actual: mask.len(),
        }
        .into());
    }
    Ok(Grid {
        side: phase.side,
        values: phase.values.iter().zip(&mask.phases).map(|(p, w)| p + w).collect(),
    })
}

/// Knobs of one simulated reconstruction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReconSettings {
    pub grid_side: usize,
    pub pupil_diameter: usize,
    /// Multiplier on the PSF noise level `σ·peak(PSF)/peak(scene)`.
    pub psf_noise_scale: f64,
    /// Fixed Wiener noise-to-signal ratio; `None` uses `σ²/power(clean)`.
    pub nsr: Option<f64>,
}

impl Default for ReconSettings {
    fn default() -> Self {
        Self {
            grid_side: 256,
            pupil_diameter: 128,
            psf_noise_scale: 1.0,
            nsr: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ReconOutcome {
    pub psf: Psf2D,
    pub noisy_psf: Image2D,
    pub measurement: Image2D,
    pub estimate: Image2D,
    pub nsr: f64,
    pub psf_sigma: f64,
    pub ssim: f64,
    pub measurement_ssim: f64,
}

/// Aberrate, optionally mask, blur, add noise to measurement and PSF,
/// Wiener-deconvolve with the noisy PSF and score against the scene.
pub fn simulate_reconstruction<R: Rng + ?Sized>(
    scene: &Image2D,
    coeffs: &SeidelCoefficients,
    mask: Option<&MaskSample>,
    sigma: f64,
    settings: &ReconSettings,
    rng: &mut R,
) -> Result<ReconOutcome> {
    let side = settings.grid_side;
    if scene.shape() != (side, side) {
        return Err(ImagingError::ShapeMismatch(scene.shape(), (side, side)));
    }
    let (amp, mut phase) = embedded_pupil(coeffs, side, settings.pupil_diameter)?;
    if let Some(m) = mask {
        phase = mask_phase_grid(&phase, m)?;
    }
    let psf = psf_from_pupil_2d(&amp, &phase)?;
    let clean = convolve_2d(scene, &psf)?;
    let measurement = add_gaussian_noise(&clean, NoiseSpec { sigma }, rng)?;
    let scene_peak = scene.max();
    let psf_sigma = if scene_peak > 0.0 {
        sigma * psf.peak() / scene_peak * settings.psf_noise_scale
    } else {
        0.0
    };
    let mut noisy_psf = add_gaussian_noise(psf.image(), NoiseSpec { sigma: psf_sigma }, rng)?;
    let total: f64 = noisy_psf.pixels().iter().sum();
    if total != 0.0 {
        noisy_psf = noisy_psf.map(|v| v / total)?;
    }
    let nsr = settings.nsr.unwrap_or_else(|| {
        let p = clean.power();
        if p > 0.0 {
            sigma * sigma / p
        } else {
            0.0
        }
    });
    let estimate = wiener_deconvolve(&measurement, &noisy_psf, nsr)?;
    Ok(ReconOutcome {
        ssim: ssim(scene, &estimate)?,
        measurement_ssim: ssim(scene, &measurement)?,
        psf,
        noisy_psf,
        measurement,
        estimate,
        nsr,
        psf_sigma,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rand_stats::{stream, StreamKey};
    use approx::assert_abs_diff_eq;

    fn test_scene(side: usize) -> Image2D {
        Image2D::from_fn(side, side, |r, c| {
            let (x, y) = (c as f64 / side as f64, r as f64 / side as f64);
            0.5 + 0.3 * (7.0 * x).sin() * (5.0 * y).cos() + if (r / 4 + c / 4) % 2 == 0 { 0.15 } else { -0.15 }
        })
        .unwrap()
    }

    /// Nowhere-zero separable blur: 1-D taps (0.2, 0.6, 0.2) have DFT ≥ 0.2.
    fn gentle_psf(side: usize) -> Psf2D {
        let taps = [0.2, 0.6, 0.2];
        let mid = side / 2;
        Psf2D::normalized(
            Image2D::from_fn(side, side, |r, c| {
                let (dr, dc) = (r as i64 - mid as i64, c as i64 - mid as i64);
                if dr.abs() <= 1 && dc.abs() <= 1 {
                    taps[(dr + 1) as usize] * taps[(dc + 1) as usize]
                } else {
                    0.0
                }
            })
            .unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn image_validation() {
        assert!(matches!(Image2D::filled(4, 8, 0.0), Err(ImagingError::TooSmall { .. })));
        assert!(matches!(Image2D::new(8, 8, vec![0.0; 10]), Err(ImagingError::BufferLength { .. })));
        let mut px = vec![0.0; 64];
        px[5] = f64::NAN;
        assert_eq!(Image2D::new(8, 8, px), Err(ImagingError::NonFinite(5)));
    }

    #[test]
    fn diffraction_limited_psf_is_centered_and_symmetric() {
        let side = 32;
        let (amp, phase) = embedded_pupil(&SeidelCoefficients::default(), side, 16).unwrap();
        let psf = psf_from_pupil_2d(&amp, &phase).unwrap();
        let img = psf.image();
        assert_abs_diff_eq!(img.pixels().iter().sum::<f64>(), 1.0, epsilon = 1e-12);
        let peak = img.max();
        assert_eq!(img.get(side / 2, side / 2), peak);
        let m = side / 2;
        for a in 0..side {
            for b in 0..side {
                // 90° rotation about the center pixel, indices taken mod side
                let (r2, c2) = ((m + b) % side, (m + side - a % side) % side);
                let (r1, c1) = ((m + a) % side, (m + b) % side);
                assert_abs_diff_eq!(img.get(r1, c1), img.get(r2, c2), epsilon = 1e-12 * peak);
            }
        }
    }

    #[test]
    fn constant_phase_leaves_psf_unchanged() {
        let (amp, phase) = embedded_pupil(&SeidelCoefficients::sphere(2.0), 32, 16).unwrap();
        let shifted = Grid {
            side: 32,
            values: phase.values.iter().map(|v| v + 1.234).collect(),
        };
        let a = psf_from_pupil_2d(&amp, &phase).unwrap();
        let b = psf_from_pupil_2d(&amp, &shifted).unwrap();
        for (x, y) in a.image().pixels().iter().zip(b.image().pixels()) {
            assert_abs_diff_eq!(*x, *y, epsilon = 1e-14);
        }
    }

    /// Circular shift maximizing the cross-correlation, found by brute force.
    fn best_shift(reference: &Image2D, moved: &Image2D) -> (usize, usize) {
        let (h, w) = reference.shape();
        let mut best = (0, 0, f64::MIN);
        for dr in 0..h {
            for dc in 0..w {
                let mut s = 0.0;
                for r in 0..h {
                    for c in 0..w {
                        s += reference.get(r, c) * moved.get((r + dr) % h, (c + dc) % w);
                    }
                }
                if s > best.2 {
                    best = (dr, dc, s);
                }
            }
        }
        (best.0, best.1)
    }

    #[test]
    fn tilt_shifts_the_psf() {
        let (side, diameter) = (32, 16);
        // tilt·x has slope tilt/(D/2) rad per pupil pixel; a shift of k bins
        // needs slope 2πk/side, i.e. tilt = πkD/side.
        let k = 3.0;
        let tilt = std::f64::consts::PI * k * diameter as f64 / side as f64;
        let (amp, flat) = embedded_pupil(&SeidelCoefficients::default(), side, diameter).unwrap();
        let (_, tilted) = embedded_pupil(&SeidelCoefficients::tilt(tilt), side, diameter).unwrap();
        let base = psf_from_pupil_2d(&amp, &flat).unwrap();
        let moved = psf_from_pupil_2d(&amp, &tilted).unwrap();
        let (dr, dc) = best_shift(base.image(), moved.image());
        assert_eq!((dr, dc), (0, 3));
        for r in 0..side {
            for c in 0..side {
                assert_abs_diff_eq!(base.image().get(r, c), moved.image().get(r, (c + dc) % side), epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn convolution_identities() {
        let scene = test_scene(32);
        let out = convolve_2d(&scene, &Psf2D::delta(32, 32).unwrap()).unwrap();
        for (a, b) in out.pixels().iter().zip(scene.pixels()) {
            assert_abs_diff_eq!(*a, *b, epsilon = 1e-10);
        }
        let flat = Image2D::filled(32, 32, 0.37).unwrap();
        let (amp, phase) = embedded_pupil(&SeidelCoefficients::coma(3.0), 32, 16).unwrap();
        let psf = psf_from_pupil_2d(&amp, &phase).unwrap();
        let out = convolve_2d(&flat, &psf).unwrap();
        assert!(out.pixels().iter().all(|v| (v - 0.37).abs() < 1e-12));
        let blurred = convolve_2d(&scene, &psf).unwrap();
        assert_abs_diff_eq!(blurred.mean(), scene.mean(), epsilon = 1e-9);
        assert!(convolve_2d(&test_scene(16), &psf).is_err());
    }

    #[test]
    fn convolution_matches_spatial_domain() {
        let side = 16;
        let scene = test_scene(side);
        let (amp, phase) = embedded_pupil(&SeidelCoefficients::astigmatism(2.0), side, 8).unwrap();
        let psf = psf_from_pupil_2d(&amp, &phase).unwrap();
        let fast = convolve_2d(&scene, &psf).unwrap();
        let m = side / 2;
        for r in 0..side {
            for c in 0..side {
                let mut s = 0.0;
                for i in 0..side {
                    for j in 0..side {
                        // kernel offset (i - m, j - m) from the center
                        let rr = (r + side + m - i) % side;
                        let cc = (c + side + m - j) % side;
                        s += psf.image().get(i, j) * scene.get(rr, cc);
                    }
                }
                assert_abs_diff_eq!(fast.get(r, c), s, epsilon = 1e-8);
            }
        }
    }

    #[test]
    fn noise_properties() {
        let img = test_scene(256);
        let mut rng = stream(StreamKey::new(1, 1));
        assert_eq!(add_gaussian_noise(&img, NoiseSpec { sigma: 0.0 }, &mut rng).unwrap(), img);

        let noisy = add_gaussian_noise(&img, NoiseSpec { sigma: 0.1 }, &mut stream(StreamKey::new(4, 2))).unwrap();
        let again = add_gaussian_noise(&img, NoiseSpec { sigma: 0.1 }, &mut stream(StreamKey::new(4, 2))).unwrap();
        assert_eq!(noisy, again);
        let diff: Vec<f64> = noisy.pixels().iter().zip(img.pixels()).map(|(a, b)| a - b).collect();
        let k = diff.len() as f64;
        let mean = diff.iter().sum::<f64>() / k;
        let sd = (diff.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (k - 1.0)).sqrt();
        // stderr of the sample sd is about σ/√(2K)
        assert!((sd - 0.1).abs() < 3.0 * 0.1 / (2.0 * k).sqrt(), "sd {sd}");
        assert!(add_gaussian_noise(&img, NoiseSpec { sigma: -1.0 }, &mut rng).is_err());
    }

    #[test]
    fn wiener_exact_inversion() {
        let scene = test_scene(32);
        let psf = gentle_psf(32);
        let blurred = convolve_2d(&scene, &psf).unwrap();
        let est = wiener_deconvolve(&blurred, psf.image(), 0.0).unwrap();
        let err = est.pixels().iter().zip(scene.pixels()).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let norm = scene.pixels().iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(err / norm < 1e-6);

        let est = wiener_deconvolve(&scene, Psf2D::delta(32, 32).unwrap().image(), 0.0).unwrap();
        for (a, b) in est.pixels().iter().zip(scene.pixels()) {
            assert_abs_diff_eq!(*a, *b, epsilon = 1e-12);
        }
    }

    #[test]
    fn wiener_reports_null_frequency() {
        // taps (1/4, 1/2, 1/4) along columns vanish at the Nyquist column.
        let side = 16;
        let mid = side / 2;
        let psf = Image2D::from_fn(side, side, |r, c| match (r == mid, c as i64 - mid as i64) {
            (true, 0) => 0.5,
            (true, -1) | (true, 1) => 0.25,
            _ => 0.0,
        })
        .unwrap();
        let scene = test_scene(side);
        let err = wiener_deconvolve(&scene, &psf, 0.0).unwrap_err();
        assert!(matches!(err, ImagingError::NullFrequency { col: 8, .. }), "{err}");
        assert!(wiener_deconvolve(&scene, &psf, 1e-3).is_ok());
        assert!(wiener_deconvolve(&scene, &psf, -1.0).is_err());
    }

    #[test]
    fn ssim_cases() {
        let x = test_scene(32);
        assert_abs_diff_eq!(ssim(&x, &x).unwrap(), 1.0, epsilon = 1e-12);
        let inv = x.map(|v| 1.0 - v).unwrap();
        assert!(ssim(&x, &inv).unwrap() < 1.0);
        let noisy = add_gaussian_noise(&x, NoiseSpec { sigma: 0.1 }, &mut stream(StreamKey::new(0, 0))).unwrap();
        let s = ssim(&x, &noisy).unwrap();
        assert!(s < 1.0 && s > -1.0);
        assert!(ssim(&x, &test_scene(16)).is_err());
    }

    #[test]
    fn ssim_matches_naive_windows() {
        let x = test_scene(16);
        let y = add_gaussian_noise(&x, NoiseSpec { sigma: 0.05 }, &mut stream(StreamKey::new(2, 0))).unwrap();
        let (lo, hi) = (x.min(), x.max());
        let f = |v: f64| (v - lo) / (hi - lo);
        let mut total = 0.0;
        let mut count = 0;
        for r in 0..=8 {
            for c in 0..=8 {
                let mut a = Vec::new();
                let mut b = Vec::new();
                for i in 0..8 {
                    for j in 0..8 {
                        a.push(f(x.get(r + i, c + j)));
                        b.push(f(y.get(r + i, c + j)));
                    }
                }
                let ma = a.iter().sum::<f64>() / 64.0;
                let mb = b.iter().sum::<f64>() / 64.0;
                let va = a.iter().map(|v| (v - ma).powi(2)).sum::<f64>() / 64.0;
                let vb = b.iter().map(|v| (v - mb).powi(2)).sum::<f64>() / 64.0;
                let cab = a.iter().zip(&b).map(|(p, q)| (p - ma) * (q - mb)).sum::<f64>() / 64.0;
                let (c1, c2) = (1e-4, 9e-4);
                total += (2.0 * ma * mb + c1) * (2.0 * cab + c2) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
                count += 1;
            }
        }
        assert_abs_diff_eq!(ssim(&x, &y).unwrap(), total / count as f64, epsilon = 1e-10);
    }

    #[test]
    fn resample_keeps_constants() {
        let img = Image2D::filled(20, 20, 0.3).unwrap();
        let r = img.resample(32, 32).unwrap();
        assert!(r.pixels().iter().all(|v| (v - 0.3).abs() < 1e-15));
        assert_eq!(img.resample(20, 20).unwrap(), img);
    }

    #[test]
    fn pupil_diameter_validation() {
        assert!(embedded_pupil(&SeidelCoefficients::default(), 32, 40).is_err());
        assert!(embedded_pupil(&SeidelCoefficients::default(), 32, 4).is_err());
    }
}
