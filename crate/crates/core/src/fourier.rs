//! 2-D DFT helpers on row-major complex buffers.

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use std::sync::Arc;

pub(crate) struct Fft2 {
    height: usize,
    width: usize,
    row_fwd: Arc<dyn Fft<f64>>,
    row_inv: Arc<dyn Fft<f64>>,
    col_fwd: Arc<dyn Fft<f64>>,
    col_inv: Arc<dyn Fft<f64>>,
}

impl Fft2 {
    pub(crate) fn new(height: usize, width: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            height,
            width,
            row_fwd: planner.plan_fft_forward(width),
            row_inv: planner.plan_fft_inverse(width),
            col_fwd: planner.plan_fft_forward(height),
            col_inv: planner.plan_fft_inverse(height),
        }
    }

    fn run(&self, data: &mut [Complex64], inverse: bool) {
        let (h, w) = (self.height, self.width);
        assert_eq!(data.len(), h * w);
        let (row, col) = if inverse {
            (&self.row_inv, &self.col_inv)
        } else {
            (&self.row_fwd, &self.col_fwd)
        };
        row.process(data);
        let mut column = vec![Complex64::new(0.0, 0.0); h];
        for c in 0..w {
            for r in 0..h {
                column[r] = data[r * w + c];
            }
            col.process(&mut column);
            for r in 0..h {
                data[r * w + c] = column[r];
            }
        }
        if inverse {
            let scale = 1.0 / (h * w) as f64;
            for v in data.iter_mut() {
                *v *= scale;
            }
        }
    }

    pub(crate) fn forward(&self, data: &mut [Complex64]) {
        self.run(data, false);
    }

    /// Inverse transform including the `1/(h·w)` factor.
    pub(crate) fn inverse(&self, data: &mut [Complex64]) {
        self.run(data, true);
    }
}

pub(crate) fn to_complex(values: &[f64]) -> Vec<Complex64> {
    values.iter().map(|&v| Complex64::new(v, 0.0)).collect()
}

/// Circularly shift so that index `(0, 0)` moves to `(h/2, w/2)`.
pub(crate) fn fftshift<T: Copy>(data: &[T], height: usize, width: usize) -> Vec<T> {
    roll(data, height, width, height / 2, width / 2)
}

/// Inverse of [`fftshift`]: `(h/2, w/2)` moves to `(0, 0)`.
pub(crate) fn ifftshift<T: Copy>(data: &[T], height: usize, width: usize) -> Vec<T> {
    roll(data, height, width, height - height / 2, width - width / 2)
}

/// `out[(r + dr) % h][(c + dc) % w] = data[r][c]`.
pub(crate) fn roll<T: Copy>(data: &[T], height: usize, width: usize, dr: usize, dc: usize) -> Vec<T> {
    let mut out = data.to_vec();
    for r in 0..height {
        let rr = (r + dr) % height;
        for c in 0..width {
            out[rr * width + (c + dc) % width] = data[r * width + c];
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shifts_are_inverse() {
        let (h, w) = (5, 6);
        let data: Vec<usize> = (0..h * w).collect();
        assert_eq!(ifftshift(&fftshift(&data, h, w), h, w), data);
        let shifted = fftshift(&data, h, w);
        assert_eq!(shifted[(h / 2) * w + w / 2], 0);
    }

    #[test]
    fn round_trip_and_delta() {
        let (h, w) = (4, 8);
        let plan = Fft2::new(h, w);
        let orig: Vec<Complex64> = (0..h * w).map(|i| Complex64::new(i as f64, -(i as f64) / 3.0)).collect();
        let mut buf = orig.clone();
        plan.forward(&mut buf);
        plan.inverse(&mut buf);
        for (a, b) in buf.iter().zip(&orig) {
            assert!((a - b).norm() < 1e-12);
        }
        let mut delta = vec![Complex64::new(0.0, 0.0); h * w];
        delta[0] = Complex64::new(1.0, 0.0);
        plan.forward(&mut delta);
        assert!(delta.iter().all(|v| *v == Complex64::new(1.0, 0.0)));
    }
}
