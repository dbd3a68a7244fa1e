//! Modulation transfer functions of 1-D pupils and their laws under random
//! phase masks.
//!
//! Conventions: the pupil period is `N` (even), the aperture is the first
//! `M = N/2` samples, and `C(n) = M - n` is the number of aperture samples
//! that overlap at lag `n`. The MTF is normalized so that `H_0 = 1`.
//!
//! For a fair binary mask the lagged sign products `R_j R_{j-n}`,
//! `j = n..M-1`, are i.i.d. uniform on `{-1, +1}^C` (the sign of each new
//! product carries a fresh independent factor). The exact law of `H_n` is
//! therefore the push-forward of the uniform measure on that `C`-dimensional
//! hypercube, which is what [`HypercubeLaw`] enumerates.

use crate::optics::{self, MaskSpec, OpticsError, PupilFunction};
use crate::rand_stats::{stream, StreamKey};
use num_complex::Complex64;
use rand::Rng;
use rayon::prelude::*;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Largest hypercube dimension enumerated exactly (2^20 vertices).
pub const ENUMERATION_CAP: usize = 20;

/// Default number of draws above which raw ensemble matrices are dropped.
pub const RAW_DRAW_CAP: usize = 10_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TheoryError {
    #[error(transparent)]
    Optics(#[from] OpticsError),
    #[error("frequency index {n} outside the valid range {min}..={max}")]
    FrequencyOutOfRange { n: usize, min: usize, max: usize },
    #[error("exact enumeration needs 2^{dimension} vertices, above the cap 2^{cap}; use Monte Carlo")]
    EnumerationCap { dimension: usize, cap: usize },
    #[error("probability must lie in [0, 1], got {0}")]
    InvalidProbability(f64),
    #[error("number of trials must be at least 1")]
    NoTrials,
}

pub type Result<T> = std::result::Result<T, TheoryError>;

/// A normalized MTF `H_n`, `n = 0..N-1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mtf {
    values: Vec<f64>,
}

impl Mtf {
    pub fn from_values(values: Vec<f64>) -> Self {
        Self { values }
    }

    pub fn period(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn get(&self, n: usize) -> f64 {
        self.values[n]
    }
}

fn phasors(pupil: &PupilFunction) -> Vec<Complex64> {
    pupil
        .amplitude()
        .iter()
        .zip(pupil.phase())
        .map(|(&a, &p)| Complex64::from_polar(a, p))
        .collect()
}

fn normalize(mut magnitudes: Vec<f64>) -> Mtf {
    let dc = magnitudes[0];
    for v in &mut magnitudes {
        *v /= dc;
    }
    Mtf { values: magnitudes }
}

/// MTF by direct circular autocorrelation `|Σ_m P_m P*_{m-n}|`, normalized by
/// its lag-zero value.
pub fn mtf(pupil: &PupilFunction) -> Mtf {
    let n_period = pupil.period();
    let p = phasors(pupil);
    let amp = pupil.amplitude();
    let mags = (0..n_period)
        .map(|lag| {
            let mut acc = Complex64::new(0.0, 0.0);
            for m in 0..n_period {
                let k = (m + n_period - lag) % n_period;
                if amp[m] != 0.0 && amp[k] != 0.0 {
                    acc += p[m] * p[k].conj();
                }
            }
            acc.norm()
        })
        .collect();
    normalize(mags)
}

/// MTF through the frequency domain: `IDFT(|DFT(P)|²)`.
pub fn mtf_fft(pupil: &PupilFunction) -> Mtf {
    let n_period = pupil.period();
    let mut planner = FftPlanner::new();
    let fwd = planner.plan_fft_forward(n_period);
    let inv = planner.plan_fft_inverse(n_period);
    let mut buf = phasors(pupil);
    fwd.process(&mut buf);
    for v in &mut buf {
        *v = Complex64::new(v.norm_sqr(), 0.0);
    }
    inv.process(&mut buf);
    normalize(buf.iter().map(|c| c.norm()).collect())
}

/// Circular lag distance `min(n, N - n)`.
pub fn circular_distance(n: usize, period: usize) -> usize {
    let n = n % period;
    n.min(period - n)
}

/// The diffraction-limited MTF `(M - |n|')/M`, zero for `|n|' ≥ M`.
pub fn diffraction_limit(period: usize) -> Result<Mtf> {
    optics::check_period(period)?;
    let m = optics::aperture_len(period);
    let values = (0..period)
        .map(|n| {
            let d = circular_distance(n, period);
            if d >= m {
                0.0
            } else {
                (m - d) as f64 / m as f64
            }
        })
        .collect();
    Ok(Mtf { values })
}

/// Fill `H_{N-n} = H_n` and zero the lags with no aperture overlap.
fn extend_symmetric(period: usize, half: &[f64]) -> Mtf {
    let m = half.len();
    let mut values = vec![0.0; period];
    for (n, &h) in half.iter().enumerate() {
        values[n] = h;
        if n > 0 {
            values[period - n] = h;
        }
    }
    debug_assert_eq!(m, period / 2);
    Mtf { values }
}

/// Closed-form uniform-mask MTF for a realized mask `w`:
/// `H_n = (1/M)|Σ_{j=n}^{M-1} exp(i(w_j - w_{j-n}))|`.
pub fn uniform_mtf_from_phases(w: &[f64]) -> Result<Mtf> {
    let period = w.len();
    optics::check_period(period)?;
    let m = optics::aperture_len(period);
    let half: Vec<f64> = (0..m)
        .map(|n| {
            let s: Complex64 = (n..m)
                .map(|j| Complex64::from_polar(1.0, w[j] - w[j - n]))
                .sum();
            s.norm() / m as f64
        })
        .collect();
    Ok(extend_symmetric(period, &half))
}

/// Draw a uniform mask and return the closed-form MTF. Consumes exactly the
/// same stream values as `sample_mask(Uniform, N, rng)`.
pub fn uniform_mtf_sample<R: Rng + ?Sized>(period: usize, rng: &mut R) -> Result<Mtf> {
    optics::check_period(period)?;
    let w = optics::sample_mask(MaskSpec::Uniform, period, rng)?;
    uniform_mtf_from_phases(&w.phases)
}

/// MTF of the pupil after one masked draw of `spec`.
pub fn masked_mtf_sample<R: Rng + ?Sized>(
    pupil: &PupilFunction,
    spec: MaskSpec,
    rng: &mut R,
) -> Result<Mtf> {
    let mask = optics::sample_mask(spec, pupil.period(), rng)?;
    Ok(mtf(&optics::apply_mask(pupil, &mask)?))
}

/// One Bernoulli-`p` masked MTF draw (direct route: sample, apply, autocorrelate).
pub fn binary_mtf_sample<R: Rng + ?Sized>(pupil: &PupilFunction, p: f64, rng: &mut R) -> Result<Mtf> {
    if !(0.0..=1.0).contains(&p) {
        return Err(TheoryError::InvalidProbability(p));
    }
    masked_mtf_sample(pupil, MaskSpec::Bernoulli { p }, rng)
}

fn check_lag(pupil: &PupilFunction, n: usize, min: usize) -> Result<usize> {
    let m = pupil.support_len();
    if n < min || n >= m {
        return Err(TheoryError::FrequencyOutOfRange { n, min, max: m - 1 });
    }
    Ok(m)
}

/// Lagged phase differences `θ_j = φ_j - φ_{j-n}` for `j = n..M-1`.
fn lagged_phases(pupil: &PupilFunction, n: usize) -> Vec<f64> {
    let m = pupil.support_len();
    let phi = pupil.phase();
    (n..m).map(|j| phi[j] - phi[j - n]).collect()
}

/// Aberration coupling `|cos Δ_{jk}|` over unordered aperture pairs `j < k`
/// at lag `n`, with `Δ_{jk} = φ_j - φ_{j-n} - φ_k + φ_{k-n}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AberrationCouplingVector {
    pub source_n: usize,
    pub pairs: Vec<(usize, usize)>,
    pub entries: Vec<f64>,
}

impl AberrationCouplingVector {
    pub fn pair_count(&self) -> usize {
        self.entries.len()
    }
}

pub fn coupling_vector(pupil: &PupilFunction, n: usize) -> Result<AberrationCouplingVector> {
    let m = check_lag(pupil, n, 1)?;
    let phi = pupil.phase();
    let mut pairs = Vec::new();
    let mut entries = Vec::new();
    for j in n..m {
        for k in (j + 1)..m {
            let delta = phi[j] - phi[j - n] - phi[k] + phi[k - n];
            pairs.push((j, k));
            entries.push(delta.cos().abs());
        }
    }
    Ok(AberrationCouplingVector {
        source_n: n,
        pairs,
        entries,
    })
}

/// Exact law of the fair-binary-mask MTF at one lag.
///
/// `H_n = (√C/M)·√(1 + (2/C) Σ_{j<k} cos(Δ_{jk}) u_j u_k)` with `u` uniform on
/// `{-1, +1}^C`. The coupling keeps the sign of the cosine; the sign cannot
/// be absorbed into independent pair signs because pair products of the
/// same `u` are dependent once `C ≥ 3`.
#[derive(Debug, Clone)]
pub struct HypercubeLaw {
    support: usize,
    lag: usize,
    phasors: Vec<Complex64>,
    coupling: Vec<Vec<f64>>,
}

impl HypercubeLaw {
    pub fn new(pupil: &PupilFunction, n: usize) -> Result<Self> {
        let m = check_lag(pupil, n, 1)?;
        let theta = lagged_phases(pupil, n);
        let c = theta.len();
        let coupling = (0..c)
            .map(|a| (0..c).map(|b| (theta[a] - theta[b]).cos()).collect())
            .collect();
        Ok(Self {
            support: m,
            lag: n,
            phasors: theta.iter().map(|&t| Complex64::from_polar(1.0, t)).collect(),
            coupling,
        })
    }

    pub fn lag(&self) -> usize {
        self.lag
    }

    /// Hypercube dimension `C(N, n)`.
    pub fn dimension(&self) -> usize {
        self.phasors.len()
    }

    /// Normalized MTF at vertex `u` (entries ±1), via the quadratic form.
    pub fn value(&self, u: &[f64]) -> f64 {
        let c = self.dimension();
        debug_assert_eq!(u.len(), c);
        let mut cross = 0.0;
        for a in 0..c {
            for b in (a + 1)..c {
                cross += self.coupling[a][b] * u[a] * u[b];
            }
        }
        let cf = c as f64;
        let radicand = (1.0 + 2.0 * cross / cf).max(0.0);
        cf.sqrt() * radicand.sqrt() / self.support as f64
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u: Vec<f64> = (0..self.dimension())
            .map(|_| if rng.random_bool(0.5) { 1.0 } else { -1.0 })
            .collect();
        self.value(&u)
    }

    /// `E[H_n]` by Gray-code enumeration of the hypercube. The law is
    /// invariant under `u -> -u`, so only the half with `u_0 = +1` is visited.
    pub fn expectation(&self, cap: usize) -> Result<f64> {
        let c = self.dimension();
        if c > cap {
            return Err(TheoryError::EnumerationCap { dimension: c, cap });
        }
        let free = c - 1;
        let mut signs = vec![1.0; c];
        let mut sum: Complex64 = self.phasors.iter().sum();
        let mut total = sum.norm();
        for step in 1u64..(1u64 << free) {
            // flip coordinate 1 + trailing_zeros(step)
            let bit = 1 + step.trailing_zeros() as usize;
            sum -= self.phasors[bit] * (2.0 * signs[bit]);
            signs[bit] = -signs[bit];
            total += sum.norm();
        }
        Ok(total / (1u64 << free) as f64 / self.support as f64)
    }
}

/// Exact `E[H_n]` for a fair binary mask. `n = 0` gives 1.
pub fn binary_mtf_expectation_exact(pupil: &PupilFunction, n: usize) -> Result<f64> {
    if n == 0 {
        return Ok(1.0);
    }
    HypercubeLaw::new(pupil, n)?.expectation(ENUMERATION_CAP)
}

/// Aberration-invariant lower bound on `E[H_n]`: the exact expectation at
/// unit coupling (`cos Δ = 1` for every pair), where the quadratic form
/// collapses to `(Σ u_j)²`. Evaluated through the binomial distribution of
/// the number of positive signs, so no enumeration cap applies.
pub fn binary_mtf_expectation_lower_bound(period: usize, n: usize) -> Result<f64> {
    optics::check_period(period)?;
    let m = optics::aperture_len(period);
    if n == 0 {
        return Ok(1.0);
    }
    if n >= m {
        return Err(TheoryError::FrequencyOutOfRange { n, min: 1, max: m - 1 });
    }
    let c = m - n;
    // Σ_k binom(C, k) |2k - C| / 2^C, binomial weights built in log space
    let ln_half = -(c as f64) * std::f64::consts::LN_2;
    let mut ln_binom = 0.0f64;
    let mut acc = 0.0;
    for k in 0..=c {
        if k > 0 {
            ln_binom += ((c - k + 1) as f64).ln() - (k as f64).ln();
        }
        let dist = (2 * k as i64 - c as i64).unsigned_abs() as f64;
        acc += (ln_binom + ln_half).exp() * dist;
    }
    Ok(acc / m as f64)
}

/// Result of evaluating the independent-pair-sign model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairSignExpectation {
    pub value: f64,
    pub vertices: u64,
    pub clipped_vertices: u64,
}

/// Expectation under the model that treats each unordered pair as an
/// independent sign with weight `|cos Δ_{jk}|`:
/// `(√C/M)·2^{-P} Σ_v √(max(0, 1 + 2 aᵀv/C))` over `v ∈ {-1,+1}^P`,
/// `P = C(C-1)/2`. Negative radicands are clipped and counted.
///
/// This model agrees with the exact law only while `C ≤ 2`; it is kept to
/// quantify the gap.
pub fn pair_sign_expectation(
    coupling: &AberrationCouplingVector,
    support: usize,
    cap: usize,
) -> Result<PairSignExpectation> {
    let pairs = coupling.pair_count();
    if pairs > cap {
        return Err(TheoryError::EnumerationCap { dimension: pairs, cap });
    }
    let c = (support - coupling.source_n) as f64;
    let vertices = 1u64 << pairs;
    let mut total = 0.0;
    let mut clipped = 0u64;
    for mask in 0..vertices {
        let dot: f64 = coupling
            .entries
            .iter()
            .enumerate()
            .map(|(q, &a)| if mask >> q & 1 == 1 { -a } else { a })
            .sum();
        let r = 1.0 + 2.0 * dot / c;
        if r < 0.0 {
            clipped += 1;
        } else {
            total += r.sqrt();
        }
    }
    Ok(PairSignExpectation {
        value: c.sqrt() * total / vertices as f64 / support as f64,
        vertices,
        clipped_vertices: clipped,
    })
}

/// Closed-form `E[H_n²]` for a Bernoulli-`p` mask, `0 ≤ n ≤ M-1`.
pub fn binary_mtf_second_moment(pupil: &PupilFunction, n: usize, p: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&p) {
        return Err(TheoryError::InvalidProbability(p));
    }
    let m = check_lag(pupil, n, 0)?;
    if n == 0 {
        return Ok(1.0);
    }
    let phi = pupil.phase();
    let mf = m as f64;
    let c = (m - n) as f64;
    let q2 = (1.0 - 2.0 * p).powi(2);
    let q4 = q2 * q2;
    let e = |t: f64| Complex64::from_polar(1.0, t);

    // k = j + n
    let forward: Complex64 = (n..m.saturating_sub(n))
        .map(|j| e(2.0 * phi[j] - phi[j - n] - phi[j + n]))
        .sum();
    // k = j - n
    let backward: Complex64 = (2 * n..m)
        .map(|j| e(phi[j] - 2.0 * phi[j - n] + phi[j - 2 * n]))
        .sum();
    let mut generic = Complex64::new(0.0, 0.0);
    for j in n..m {
        for k in n..m {
            if k == j || k + n == j || k == j + n {
                continue;
            }
            generic += e(phi[j] - phi[j - n] - phi[k] + phi[k - n]);
        }
    }
    Ok(c / (mf * mf) + q2 * (forward + backward).re / (mf * mf) + q4 * generic.re / (mf * mf))
}

/// Per-frequency statistics over independent masked draws.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MtfEnsemble {
    pub period: usize,
    pub draws: usize,
    pub mean: Vec<f64>,
    pub std_error: Vec<f64>,
    pub q05: Vec<f64>,
    pub q50: Vec<f64>,
    pub q95: Vec<f64>,
    pub raw: Option<Vec<Vec<f64>>>,
}

impl MtfEnsemble {
    /// Column `n` of the raw draws, if retained.
    pub fn column(&self, n: usize) -> Option<Vec<f64>> {
        self.raw.as_ref().map(|r| r.iter().map(|row| row[n]).collect())
    }
}

/// Linear-interpolation quantile of a sorted slice.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let k = sorted.len();
    if k == 1 {
        return sorted[0];
    }
    let h = q * (k - 1) as f64;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(k - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Reduce draws (one row per trial) in fixed index order.
pub fn summarize_draws(draws: Vec<Vec<f64>>, raw_cap: usize) -> MtfEnsemble {
    let k = draws.len();
    let period = draws[0].len();
    let kf = k as f64;
    let mut mean = vec![0.0; period];
    let mut std_error = vec![0.0; period];
    let mut q05 = vec![0.0; period];
    let mut q50 = vec![0.0; period];
    let mut q95 = vec![0.0; period];
    let mut col = vec![0.0; k];
    for n in 0..period {
        for (t, row) in draws.iter().enumerate() {
            col[t] = row[n];
        }
        let mu = col.iter().sum::<f64>() / kf;
        mean[n] = mu;
        if k > 1 {
            let var = col.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / (kf - 1.0);
            std_error[n] = (var / kf).sqrt();
        }
        col.sort_by(|a, b| a.total_cmp(b));
        q05[n] = quantile_sorted(&col, 0.05);
        q50[n] = quantile_sorted(&col, 0.50);
        q95[n] = quantile_sorted(&col, 0.95);
    }
    MtfEnsemble {
        period,
        draws: k,
        mean,
        std_error,
        q05,
        q50,
        q95,
        raw: (k <= raw_cap).then_some(draws),
    }
}

/// Run `trials` independent draws, trial `t` using substream `(seed, t)`.
/// Output order is the trial order regardless of scheduling.
pub fn parallel_draws<T, F>(trials: usize, master_seed: u64, draw: F) -> Vec<T>
where
    T: Send,
    F: Fn(&mut rand_chacha::ChaCha8Rng) -> T + Sync,
{
    (0..trials as u64)
        .into_par_iter()
        .map(|t| draw(&mut stream(StreamKey::new(master_seed, t))))
        .collect()
}

/// Trials per chunk in [`parallel_moments`]; fixed so results do not depend
/// on the thread count.
const MOMENT_CHUNK: usize = 1 << 14;

/// Per-component mean and standard error of `trials` vector-valued draws
/// without retaining them. Chunks are reduced with Welford updates and merged
/// in chunk order, so the result is bitwise reproducible.
pub fn parallel_moments<F>(trials: usize, master_seed: u64, width: usize, draw: F) -> (Vec<f64>, Vec<f64>)
where
    F: Fn(&mut rand_chacha::ChaCha8Rng) -> Vec<f64> + Sync,
{
    let chunks = trials.div_ceil(MOMENT_CHUNK);
    let partial: Vec<(f64, Vec<f64>, Vec<f64>)> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let start = c * MOMENT_CHUNK;
            let end = (start + MOMENT_CHUNK).min(trials);
            let mut mean = vec![0.0; width];
            let mut m2 = vec![0.0; width];
            for (i, t) in (start..end).enumerate() {
                let x = draw(&mut stream(StreamKey::new(master_seed, t as u64)));
                let k = (i + 1) as f64;
                for q in 0..width {
                    let d = x[q] - mean[q];
                    mean[q] += d / k;
                    m2[q] += d * (x[q] - mean[q]);
                }
            }
            ((end - start) as f64, mean, m2)
        })
        .collect();
    let mut count = 0.0;
    let mut mean = vec![0.0; width];
    let mut m2 = vec![0.0; width];
    for (kb, mb, m2b) in partial {
        let total = count + kb;
        for q in 0..width {
            let d = mb[q] - mean[q];
            mean[q] += d * kb / total;
            m2[q] += m2b[q] + d * d * count * kb / total;
        }
        count = total;
    }
    let se = m2
        .iter()
        .map(|v| if count > 1.0 { (v / (count - 1.0) / count).sqrt() } else { 0.0 })
        .collect();
    (mean, se)
}

pub fn monte_carlo_mtf(
    pupil: &PupilFunction,
    spec: MaskSpec,
    trials: usize,
    master_seed: u64,
) -> Result<MtfEnsemble> {
    monte_carlo_mtf_with_cap(pupil, spec, trials, master_seed, RAW_DRAW_CAP)
}

pub fn monte_carlo_mtf_with_cap(
    pupil: &PupilFunction,
    spec: MaskSpec,
    trials: usize,
    master_seed: u64,
    raw_cap: usize,
) -> Result<MtfEnsemble> {
    if trials == 0 {
        return Err(TheoryError::NoTrials);
    }
    spec.validate()?;
    let draws: Vec<Vec<f64>> = parallel_draws(trials, master_seed, |rng| {
        masked_mtf_sample(pupil, spec, rng)
            .expect("pupil and spec validated")
            .into_values()
    });
    Ok(summarize_draws(draws, raw_cap))
}
