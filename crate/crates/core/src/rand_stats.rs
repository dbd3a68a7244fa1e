//! Deterministic random substreams and the small statistical test kit used
//! by the verification suites.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatsError {
    #[error("sample is empty")]
    EmptySample,
    #[error("need at least {needed} observations, got {got}")]
    TooSmall { needed: usize, got: usize },
    #[error("chi-square design underpowered: expected count {expected:.3} per category is below 5")]
    Underpowered { expected: f64 },
    #[error("need at least 2 categories, got {0}")]
    TooFewCategories(usize),
    #[error("significance level must lie in (0, 1), got {0}")]
    InvalidAlpha(f64),
}

pub type Result<T> = std::result::Result<T, StatsError>;

/// Identifies one substream: the ChaCha key is derived from `master_seed`,
/// the 64-bit stream (nonce) is `trial_index`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StreamKey {
    pub master_seed: u64,
    pub trial_index: u64,
}

impl StreamKey {
    pub fn new(master_seed: u64, trial_index: u64) -> Self {
        Self { master_seed, trial_index }
    }
}

/// Counter-based substream for `key`. Independent of any scheduling order.
pub fn stream(key: StreamKey) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(key.master_seed);
    rng.set_stream(key.trial_index);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Pass,
    Fail,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestReport {
    pub statistic: f64,
    pub p_value: f64,
    pub sample_sizes: (usize, usize),
    pub alpha: f64,
    pub decision: Decision,
}

impl TestReport {
    fn new(statistic: f64, p_value: f64, sample_sizes: (usize, usize), alpha: f64) -> Self {
        let p_value = p_value.clamp(0.0, 1.0);
        let decision = if p_value > alpha { Decision::Pass } else { Decision::Fail };
        Self {
            statistic,
            p_value,
            sample_sizes,
            alpha,
            decision,
        }
    }

    pub fn passed(&self) -> bool {
        self.decision == Decision::Pass
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(StatsError::InvalidAlpha(alpha))
    }
}

/// Per-test level for `tests` simultaneous comparisons.
pub fn bonferroni(alpha: f64, tests: usize) -> f64 {
    alpha / tests.max(1) as f64
}

fn sorted(x: &[f64]) -> Vec<f64> {
    let mut v = x.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    v
}

/// Kolmogorov distribution tail `Q(λ) = 2 Σ (-1)^{k-1} exp(-2k²λ²)`.
fn kolmogorov_q(lambda: f64) -> f64 {
    if lambda < 1e-3 {
        return 1.0;
    }
    let mut sum = 0.0;
    let mut sign = 1.0;
    for k in 1..=200 {
        let kf = k as f64;
        let term = (-2.0 * kf * kf * lambda * lambda).exp();
        sum += sign * term;
        if term < 1e-16 {
            break;
        }
        sign = -sign;
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// Two-sample Kolmogorov–Smirnov test with the asymptotic p-value
/// (Stephens' small-sample correction on the effective size).
pub fn ks_two_sample(x: &[f64], y: &[f64], alpha: f64) -> Result<TestReport> {
    check_alpha(alpha)?;
    if x.is_empty() || y.is_empty() {
        return Err(StatsError::EmptySample);
    }
    let (xs, ys) = (sorted(x), sorted(y));
    let (n, m) = (xs.len(), ys.len());
    let (mut i, mut j) = (0usize, 0usize);
    let mut d: f64 = 0.0;
    while i < n && j < m {
        let v = xs[i].min(ys[j]);
        // advance past every tie at v in both samples before comparing CDFs
        while i < n && xs[i] <= v {
            i += 1;
        }
        while j < m && ys[j] <= v {
            j += 1;
        }
        let diff = (i as f64 / n as f64 - j as f64 / m as f64).abs();
        d = d.max(diff);
    }
    let en = ((n * m) as f64 / (n + m) as f64).sqrt();
    let p = kolmogorov_q((en + 0.12 + 0.11 / en) * d);
    Ok(TestReport::new(d, p, (n, m), alpha))
}

/// Pearson chi-square goodness of fit against equal category probabilities.
pub fn chi_square_uniform(counts: &[u64], alpha: f64) -> Result<TestReport> {
    check_alpha(alpha)?;
    let k = counts.len();
    if k < 2 {
        return Err(StatsError::TooFewCategories(k));
    }
    let total: u64 = counts.iter().sum();
    let expected = total as f64 / k as f64;
    if expected < 5.0 {
        return Err(StatsError::Underpowered { expected });
    }
    let stat: f64 = counts
        .iter()
        .map(|&c| {
            let d = c as f64 - expected;
            d * d / expected
        })
        .sum();
    let dist = ChiSquared::new((k - 1) as f64).expect("k >= 2 gives positive dof");
    let p = dist.sf(stat);
    Ok(TestReport::new(stat, p, (total as usize, k), alpha))
}

/// Sample mean and standard error `√(s²/K)` with the unbiased variance.
pub fn mean_with_stderr(x: &[f64]) -> Result<(f64, f64)> {
    if x.len() < 2 {
        return Err(StatsError::TooSmall { needed: 2, got: x.len() });
    }
    let k = x.len() as f64;
    let mean = x.iter().sum::<f64>() / k;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (k - 1.0);
    Ok((mean, (var / k).sqrt()))
}

/// `|a - b|` measured in units of the pooled standard error `√(se_a² + se_b²)`.
/// Returns 0 when both estimates agree exactly, infinity for a nonzero
/// difference with zero pooled error.
pub fn pooled_z(a: (f64, f64), b: (f64, f64)) -> f64 {
    let diff = (a.0 - b.0).abs();
    let se = (a.1 * a.1 + b.1 * b.1).sqrt();
    if diff == 0.0 {
        0.0
    } else if se == 0.0 {
        f64::INFINITY
    } else {
        diff / se
    }
}
