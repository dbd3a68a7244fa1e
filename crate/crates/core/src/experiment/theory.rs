//! Verification suite for the transfer-function results. Each check is a
//! standalone function returning a [`CheckReport`]; [`run_theory_check`]
//! runs them all with substreams derived from the master seed.

use super::{
    derive_seed, invalid, slack_z, AberrationKind, CellRecord, CheckSummary, ExperimentConfig, ExperimentKind,
    MomentNormalization, OutputDir, Result, RunManifest, ROUNDING_SLACK,
};
use crate::data_io;
use crate::optics::{self, make_pupil, seidel_phase_1d, MaskSpec, PupilFunction, SeidelCoefficients};
use crate::rand_stats::{bonferroni, chi_square_uniform, ks_two_sample, stream, StreamKey, TestReport};
use crate::transfer::{
    binary_mtf_expectation_exact, binary_mtf_expectation_lower_bound, binary_mtf_sample,
    binary_mtf_second_moment, coupling_vector, diffraction_limit, masked_mtf_sample, monte_carlo_mtf_with_cap,
    mtf, pair_sign_expectation, parallel_draws, parallel_moments, uniform_mtf_sample, HypercubeLaw,
    ENUMERATION_CAP,
};
use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use std::collections::BTreeMap;
use std::f64::consts::TAU;

/// Threshold below which an MTF value counts as a near-null.
pub const NULL_THRESHOLD: f64 = 1e-3;
/// Near-nulls the unmasked system must show in the null-free check.
pub const REQUIRED_NULLS: usize = 3;
/// Minimum number of contributing terms for a frequency to be held to the
/// null-free requirement.
pub const NULL_FREE_MIN_TERMS: usize = 4;
/// Agreement tolerance, in standard errors, for Monte Carlo comparisons.
pub const Z_TOLERANCE: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Relation {
    /// `|observed - reference| ≤ tolerance`
    Within,
    /// `observed ≤ reference`
    AtMost,
    /// `observed ≥ reference`
    AtLeast,
    /// `observed > reference`
    Above,
}

/// A deterministic numeric assertion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub label: String,
    pub relation: Relation,
    pub observed: f64,
    pub reference: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl Comparison {
    pub fn within(label: impl Into<String>, observed: f64, reference: f64, tolerance: f64) -> Self {
        let passed = (observed - reference).abs() <= tolerance;
        Self::make(label, Relation::Within, observed, reference, tolerance, passed)
    }

    pub fn at_most(label: impl Into<String>, observed: f64, reference: f64) -> Self {
        Self::make(label, Relation::AtMost, observed, reference, 0.0, observed <= reference)
    }

    pub fn at_least(label: impl Into<String>, observed: f64, reference: f64) -> Self {
        Self::make(label, Relation::AtLeast, observed, reference, 0.0, observed >= reference)
    }

    pub fn above(label: impl Into<String>, observed: f64, reference: f64) -> Self {
        Self::make(label, Relation::Above, observed, reference, 0.0, observed > reference)
    }

    fn make(label: impl Into<String>, relation: Relation, observed: f64, reference: f64, tolerance: f64, passed: bool) -> Self {
        Self {
            label: label.into(),
            relation,
            observed,
            reference,
            tolerance,
            passed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledTest {
    pub label: String,
    #[serde(flatten)]
    pub report: TestReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckReport {
    pub name: String,
    pub passed: bool,
    pub stream_seed: u64,
    pub tests: Vec<LabeledTest>,
    pub comparisons: Vec<Comparison>,
    pub details: Map<String, Value>,
}

impl CheckReport {
    fn new(name: &str, stream_seed: u64) -> Self {
        Self {
            name: name.to_string(),
            passed: true,
            stream_seed,
            tests: Vec::new(),
            comparisons: Vec::new(),
            details: Map::new(),
        }
    }

    fn test(&mut self, label: impl Into<String>, report: TestReport) {
        self.tests.push(LabeledTest { label: label.into(), report });
    }

    fn compare(&mut self, c: Comparison) {
        self.comparisons.push(c);
    }

    fn detail(&mut self, key: &str, value: Value) {
        self.details.insert(key.to_string(), value);
    }

    fn seal(mut self) -> Self {
        self.passed = self.tests.iter().all(|t| t.report.passed()) && self.comparisons.iter().all(|c| c.passed);
        self
    }

    /// Labels of everything that failed.
    pub fn failures(&self) -> Vec<String> {
        self.tests
            .iter()
            .filter(|t| !t.report.passed())
            .map(|t| t.label.clone())
            .chain(self.comparisons.iter().filter(|c| !c.passed).map(|c| c.label.clone()))
            .collect()
    }
}

fn random_phase<R: Rng + ?Sized>(period: usize, rng: &mut R) -> Vec<f64> {
    (0..period).map(|_| rng.random_range(0.0..TAU)).collect()
}

fn random_pupil(period: usize, seed: u64) -> Result<PupilFunction> {
    Ok(make_pupil(period, &random_phase(period, &mut stream(StreamKey::new(seed, 0))))?)
}

fn seidel_pupil(kind: AberrationKind, strength: f64, period: usize) -> Result<PupilFunction> {
    Ok(make_pupil(period, &seidel_phase_1d(&kind.coefficients(strength), period)?)?)
}

/// Snap to a 1e-12 grid so that values equal up to rounding compare equal
/// in rank-based tests.
fn snap(v: f64) -> f64 {
    (v * 1e12).round() / 1e12
}

fn column(rows: &[Vec<f64>], n: usize) -> Vec<f64> {
    rows.iter().map(|r| snap(r[n])).collect()
}

/// Random profiles never exceed the diffraction limit; the flat profile
/// attains it exactly.
pub fn diffraction_bound(periods: &[usize], profiles: usize, seed: u64) -> Result<CheckReport> {
    let mut report = CheckReport::new("diffraction_bound", seed);
    for &period in periods {
        let limit = diffraction_limit(period)?;
        let flat = mtf(&PupilFunction::aberration_free(period)?);
        let flat_gap = flat
            .values()
            .iter()
            .zip(limit.values())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        report.compare(Comparison::at_most(format!("N={period} flat profile max |mtf - limit|"), flat_gap, 0.0));

        let excess: Vec<f64> = parallel_draws(profiles, derive_seed(seed, &format!("N={period}")), |rng| {
            let phase = if rng.random_bool(0.5) {
                random_phase(period, rng)
            } else {
                let mut c = || rng.random_range(-30.0..30.0);
                let coeffs = SeidelCoefficients {
                    sphere: c(),
                    coma: c(),
                    astigmatism: c(),
                    defocus: c(),
                    tilt: c(),
                };
                seidel_phase_1d(&coeffs, period).expect("period validated")
            };
            let m = mtf(&make_pupil(period, &phase).expect("period validated"));
            m.values()
                .iter()
                .zip(limit.values())
                .map(|(a, b)| a - b)
                .fold(f64::NEG_INFINITY, f64::max)
        });
        let worst = excess.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        report.compare(Comparison::at_most(
            format!("N={period} max excess over {profiles} random profiles"),
            worst,
            ROUNDING_SLACK,
        ));
    }
    Ok(report.seal())
}

/// Uniform-mask ensembles for different aberrations are indistinguishable:
/// per-frequency two-sample KS (Bonferroni over the testable frequencies)
/// and mean agreement within [`Z_TOLERANCE`] pooled standard errors.
pub fn uniform_invariance(period: usize, strength: f64, trials: usize, alpha: f64, seed: u64) -> Result<CheckReport> {
    let mut report = CheckReport::new("uniform_invariance", seed);
    let m = optics::aperture_len(period);
    let testable: Vec<usize> = (1..m).collect();
    let level = bonferroni(alpha, testable.len());
    let kinds = [AberrationKind::None, AberrationKind::Sphere, AberrationKind::Astigmatism];
    let mut ensembles = Vec::new();
    for kind in kinds {
        let pupil = seidel_pupil(kind, strength, period)?;
        let sub = derive_seed(seed, kind.name());
        ensembles.push(monte_carlo_mtf_with_cap(&pupil, MaskSpec::Uniform, trials, sub, trials)?);
    }
    for i in 0..kinds.len() {
        for j in i + 1..kinds.len() {
            let (a, b) = (&ensembles[i], &ensembles[j]);
            let (ra, rb) = (a.raw.as_ref().expect("raw kept"), b.raw.as_ref().expect("raw kept"));
            let pair = format!("{}~{}", kinds[i].name(), kinds[j].name());
            for &n in &testable {
                report.test(format!("{pair} n={n} KS"), ks_two_sample(&column(ra, n), &column(rb, n), level)?);
                let z = slack_z((a.mean[n], a.std_error[n]), (b.mean[n], b.std_error[n]));
                report.compare(Comparison::at_most(format!("{pair} n={n} mean z"), z, Z_TOLERANCE));
            }
        }
    }
    report.detail("period", json!(period));
    report.detail("strength", json!(strength));
    report.detail("trials", json!(trials));
    report.detail("per_test_alpha", json!(level));
    Ok(report.seal())
}

/// The closed-form uniform-mask MTF has the same law as masking an
/// aberrated pupil and autocorrelating.
pub fn closed_form_equivalence(period: usize, strength: f64, trials: usize, alpha: f64, seed: u64) -> Result<CheckReport> {
    let mut report = CheckReport::new("closed_form_equivalence", seed);
    optics::check_period(period)?;
    let m = optics::aperture_len(period);
    let level = bonferroni(alpha, m - 1);
    let pupil = seidel_pupil(AberrationKind::Sphere, strength, period)?;
    let closed = parallel_draws(trials, derive_seed(seed, "closed"), |rng| {
        uniform_mtf_sample(period, rng).expect("period validated").into_values()
    });
    let direct = parallel_draws(trials, derive_seed(seed, "direct"), |rng| {
        masked_mtf_sample(&pupil, MaskSpec::Uniform, rng).expect("pupil validated").into_values()
    });
    for n in 1..m {
        report.test(format!("n={n} KS"), ks_two_sample(&column(&closed, n), &column(&direct, n), level)?);
    }
    report.detail("period", json!(period));
    report.detail("sphere_strength", json!(strength));
    report.detail("per_test_alpha", json!(level));
    Ok(report.seal())
}

/// Frequencies whose fair-binary expectation can be enumerated.
pub fn enumerable_frequencies(period: usize) -> Vec<usize> {
    let m = optics::aperture_len(period);
    (1..m).filter(|&n| m - n <= ENUMERATION_CAP).collect()
}

/// Exact hypercube expectation vs Monte Carlo, and the aberration-free
/// lower bound, for a flat and a random pupil at each period.
pub fn binary_expectation(periods: &[usize], trials: usize, seed: u64) -> Result<CheckReport> {
    let mut report = CheckReport::new("binary_expectation", seed);
    let mut enumerated = BTreeMap::new();
    let mut skipped = BTreeMap::new();
    let mut exact_values = Vec::new();
    let mut pair_model = Vec::new();
    for &period in periods {
        optics::check_period(period)?;
        let m = optics::aperture_len(period);
        let ns = enumerable_frequencies(period);
        skipped.insert(period, (1..m).filter(|n| !ns.contains(n)).collect::<Vec<_>>());
        enumerated.insert(period, ns.clone());
        let pupils = [
            ("flat", PupilFunction::aberration_free(period)?),
            ("random", random_pupil(period, derive_seed(seed, &format!("phase/N={period}")))?),
        ];
        for (name, pupil) in &pupils {
            let (mean, se) = parallel_moments(trials, derive_seed(seed, &format!("mc/N={period}/{name}")), period, |rng| {
                binary_mtf_sample(pupil, 0.5, rng).expect("pupil validated").into_values()
            });
            for &n in &ns {
                let exact = binary_mtf_expectation_exact(pupil, n)?;
                let lower = binary_mtf_expectation_lower_bound(period, n)?;
                let label = format!("N={period} n={n} {name}");
                report.compare(Comparison::at_most(
                    format!("{label} mean z"),
                    slack_z((mean[n], se[n]), (exact, 0.0)),
                    Z_TOLERANCE,
                ));
                report.compare(Comparison::at_most(format!("{label} lower bound"), lower, exact + ROUNDING_SLACK));
                exact_values.push(json!({
                    "period": period, "pupil": name, "n": n, "exact": exact,
                    "monte_carlo": mean[n], "stderr": se[n], "lower_bound": lower,
                }));
                let coupling = coupling_vector(pupil, n)?;
                if let Ok(ps) = pair_sign_expectation(&coupling, pupil.support_len(), ENUMERATION_CAP) {
                    pair_model.push(json!({
                        "period": period, "pupil": name, "n": n, "exact": exact,
                        "pair_sign_model": ps.value, "clipped_vertices": ps.clipped_vertices,
                        "vertices": ps.vertices,
                    }));
                }
            }
        }
    }
    if periods.contains(&8) {
        let flat8 = PupilFunction::aberration_free(8)?;
        report.detail("hand_value_n8_k2_flat", json!(binary_mtf_expectation_exact(&flat8, 2)?));
    }
    report.detail("enumerated_frequencies", json!(enumerated));
    report.detail("skipped_frequencies", json!(skipped));
    report.detail("values", Value::Array(exact_values));
    report.detail("pair_sign_model", Value::Array(pair_model));
    report.detail("trials", json!(trials));
    Ok(report.seal())
}

/// The fair-binary masked MTF at each lag has the law of the hypercube
/// quadratic form.
pub fn binary_hypercube_law(periods: &[usize], trials: usize, alpha: f64, seed: u64) -> Result<CheckReport> {
    let mut report = CheckReport::new("binary_hypercube_law", seed);
    let cases: Vec<(usize, usize)> = periods
        .iter()
        .flat_map(|&p| (1..optics::aperture_len(p)).map(move |n| (p, n)))
        .collect();
    let level = bonferroni(alpha, cases.len());
    for &period in periods {
        let pupil = random_pupil(period, derive_seed(seed, &format!("phase/N={period}")))?;
        let direct = parallel_draws(trials, derive_seed(seed, &format!("direct/N={period}")), |rng| {
            binary_mtf_sample(&pupil, 0.5, rng).expect("pupil validated").into_values()
        });
        for n in 1..optics::aperture_len(period) {
            let law = HypercubeLaw::new(&pupil, n)?;
            let via_law: Vec<f64> = parallel_draws(trials, derive_seed(seed, &format!("law/N={period}/n={n}")), |rng| {
                snap(law.sample(rng))
            });
            report.test(format!("N={period} n={n} KS"), ks_two_sample(&column(&direct, n), &via_law, level)?);
        }
    }
    report.detail("per_test_alpha", json!(level));
    Ok(report.seal())
}

/// Closed-form second moment vs Monte Carlo; exactness at `p = 0`; and the
/// empirical resolution of `C/M²` versus `C/M` at `p = 1/2`.
pub fn second_moment(
    periods: &[usize],
    probabilities: &[f64],
    trials: usize,
    normalization: MomentNormalization,
    seed: u64,
) -> Result<CheckReport> {
    let mut report = CheckReport::new("second_moment", seed);
    let mut corollary = Vec::new();
    let mut quadratic_ok = true;
    let mut linear_ok = true;
    for &period in periods {
        optics::check_period(period)?;
        let m = optics::aperture_len(period);
        let scale = match normalization {
            MomentNormalization::Quadratic => 1.0,
            MomentNormalization::Linear => m as f64,
        };
        let flat = PupilFunction::aberration_free(period)?;
        let flat_mtf = mtf(&flat);
        for n in 0..m {
            let closed = scale * binary_mtf_second_moment(&flat, n, 0.0)?;
            report.compare(Comparison::within(
                format!("N={period} n={n} p=0 flat vs mtf^2"),
                closed,
                flat_mtf.get(n).powi(2),
                1e-10,
            ));
        }
        let pupil = random_pupil(period, derive_seed(seed, &format!("phase/N={period}")))?;
        for &p in probabilities {
            let (mean, se) = parallel_moments(trials, derive_seed(seed, &format!("mc/N={period}/p={p}")), period, |rng| {
                binary_mtf_sample(&pupil, p, rng)
                    .expect("pupil validated")
                    .values()
                    .iter()
                    .map(|h| h * h)
                    .collect()
            });
            for n in 1..m {
                let closed = scale * binary_mtf_second_moment(&pupil, n, p)?;
                report.compare(Comparison::at_most(
                    format!("N={period} n={n} p={p} mean z"),
                    slack_z((mean[n], se[n]), (closed, 0.0)),
                    Z_TOLERANCE,
                ));
                if p == 0.5 {
                    let c = (m - n) as f64;
                    let mf = m as f64;
                    let zq = slack_z((mean[n], se[n]), (c / (mf * mf), 0.0));
                    let zl = slack_z((mean[n], se[n]), (c / mf, 0.0));
                    quadratic_ok &= zq <= Z_TOLERANCE;
                    linear_ok &= zl <= Z_TOLERANCE;
                    corollary.push(json!({
                        "period": period, "n": n, "monte_carlo": mean[n], "stderr": se[n],
                        "c_over_m_squared": c / (mf * mf), "c_over_m": c / mf,
                        "z_c_over_m_squared": zq, "z_c_over_m": zl,
                    }));
                }
            }
        }
    }
    if !corollary.is_empty() {
        let resolution = match (quadratic_ok, linear_ok) {
            (true, false) => "C/M^2",
            (false, true) => "C/M",
            (true, true) => "undetermined",
            (false, false) => "neither",
        };
        report.detail("fair_mask_second_moment", Value::Array(corollary));
        report.detail("fair_mask_normalization", json!(resolution));
    }
    report.detail("normalization", json!(normalization));
    report.detail("trials", json!(trials));
    Ok(report.seal())
}

/// Fair-Bernoulli phasors are Rademacher signs, and lagged products of
/// five such signs (`n = 1`) are uniform over the 16 hypercube vertices.
pub fn rademacher_lemmas(trials: usize, alpha: f64, seed: u64) -> Result<CheckReport> {
    let mut report = CheckReport::new("rademacher_lemmas", seed);
    let spec = MaskSpec::Bernoulli { p: 0.5 };
    let phasors: Vec<Complex64> = parallel_draws(trials, derive_seed(seed, "phasor"), |rng| {
        let w = optics::sample_mask(spec, 1, rng).expect("valid spec");
        Complex64::from_polar(1.0, w.phases[0])
    });
    let plus = phasors.iter().filter(|z| z.re > 0.0).count() as f64 / trials as f64;
    let sd = (0.25 / trials as f64).sqrt();
    report.compare(Comparison::within("P(e^{i pi B} = +1)", plus, 0.5, Z_TOLERANCE * sd));
    let off_sign = phasors
        .iter()
        .map(|z| (z.re.abs() - 1.0).abs().max(z.im.abs()))
        .fold(0.0, f64::max);
    report.compare(Comparison::at_most("max distance from {-1, +1}", off_sign, 1e-15));

    let top = 4;
    let vertices: Vec<usize> = parallel_draws(trials, derive_seed(seed, "hypercube"), |rng| {
        let w = optics::sample_mask(spec, top + 1, rng).expect("valid spec");
        let r: Vec<f64> = w.phases.iter().map(|p| p.cos().round()).collect();
        (1..=top).map(|j| usize::from(r[j] * r[j - 1] < 0.0) << (j - 1)).sum()
    });
    let mut counts = vec![0u64; 1 << top];
    for v in vertices {
        counts[v] += 1;
    }
    report.test("lagged products uniform on 16 vertices", chi_square_uniform(&counts, alpha)?);
    report.detail("vertex_counts", json!(counts));
    Ok(report.seal())
}

/// Weakest sphere strength on a 0.5 rad grid up to 1000 rad whose unmasked
/// MTF has at least [`REQUIRED_NULLS`] near-nulls.
pub fn find_null_strength(period: usize) -> Result<Option<f64>> {
    for k in 1..=2000 {
        let s = 0.5 * k as f64;
        if near_nulls(&seidel_pupil(AberrationKind::Sphere, s, period)?).len() >= REQUIRED_NULLS {
            return Ok(Some(s));
        }
    }
    Ok(None)
}

fn near_nulls(pupil: &PupilFunction) -> Vec<usize> {
    let h = mtf(pupil);
    (1..pupil.support_len()).filter(|&n| h.get(n) < NULL_THRESHOLD).collect()
}

/// A sphere aberration with several near-nulls; the uniform-mask ensemble's
/// 5% quantile stays above the threshold wherever enough terms contribute.
pub fn null_free(period: usize, strength: Option<f64>, trials: usize, seed: u64) -> Result<CheckReport> {
    let mut report = CheckReport::new("null_free_uniform", seed);
    optics::check_period(period)?;
    let strength = match strength {
        Some(s) => s,
        None => find_null_strength(period)?.ok_or_else(|| {
            invalid("theory.null_free_strength", "no sphere strength up to 1000 rad gives enough near-nulls")
        })?,
    };
    let pupil = seidel_pupil(AberrationKind::Sphere, strength, period)?;
    let nulls = near_nulls(&pupil);
    report.compare(Comparison::at_least("unmasked near-null count", nulls.len() as f64, REQUIRED_NULLS as f64));
    let ens = monte_carlo_mtf_with_cap(&pupil, MaskSpec::Uniform, trials, derive_seed(seed, "ensemble"), 0)?;
    let m = pupil.support_len();
    for n in 1..=m - NULL_FREE_MIN_TERMS {
        report.compare(Comparison::above(format!("n={n} q05"), ens.q05[n], NULL_THRESHOLD));
    }
    report.detail("sphere_strength", json!(strength));
    report.detail("unmasked_near_nulls", json!(nulls));
    report.detail("q05", json!(ens.q05[..m].to_vec()));
    Ok(report.seal())
}

/// Run every check, write `checks/<name>.json` and `report.json`.
pub fn run_theory_check(config: &ExperimentConfig) -> Result<RunManifest> {
    config.expect_kind(ExperimentKind::TheoryCheck)?;
    let t = &config.theory;
    let seed = |name: &str| derive_seed(config.master_seed, name);
    let small: Vec<usize> = t.periods.iter().copied().filter(|&p| p <= 16).collect();
    let mut reports = vec![
        diffraction_bound(&t.periods, t.bound_profiles, seed("diffraction_bound"))?,
        uniform_invariance(t.invariance_period, t.invariance_strength, t.ks_trials, t.alpha, seed("uniform_invariance"))?,
        closed_form_equivalence(t.equivalence_period, t.invariance_strength, t.ks_trials, t.alpha, seed("closed_form_equivalence"))?,
        binary_expectation(&t.periods, t.expectation_trials, seed("binary_expectation"))?,
    ];
    if !small.is_empty() {
        reports.push(binary_hypercube_law(&small, t.ks_trials, t.alpha, seed("binary_hypercube_law"))?);
    }
    reports.push(second_moment(
        &t.moment_periods,
        &t.moment_probabilities,
        t.moment_trials,
        t.moment_normalization,
        seed("second_moment"),
    )?);
    reports.push(rademacher_lemmas(t.lemma_trials, t.alpha, seed("rademacher_lemmas"))?);
    reports.push(null_free(t.null_free_period, t.null_free_strength, t.null_free_trials, seed("null_free_uniform"))?);

    let mut out = OutputDir::create(config.output_dir())?;
    let mut manifest = RunManifest::new(config);
    for r in &reports {
        let rel = format!("checks/{}.json", r.name);
        data_io::write_json(r, out.file(&rel)?)?;
        manifest.cells.push(CellRecord {
            id: r.name.clone(),
            stream_seed: r.stream_seed,
            trials: 0,
            files: vec![rel],
        });
        manifest.checks.push(CheckSummary { name: r.name.clone(), passed: r.passed });
    }
    let overview: Vec<Value> = reports
        .iter()
        .map(|r| json!({"name": r.name, "passed": r.passed, "failures": r.failures()}))
        .collect();
    data_io::write_json(&overview, out.file("report.json")?)?;
    if let Some(r) = reports.iter().find(|r| r.name == "binary_expectation") {
        if let Some(v) = r.details.get("enumerated_frequencies") {
            manifest.notes.insert("enumerated_frequencies".into(), v.clone());
        }
    }
    if let Some(r) = reports.iter().find(|r| r.name == "second_moment") {
        if let Some(v) = r.details.get("fair_mask_normalization") {
            manifest.notes.insert("fair_mask_second_moment_normalization".into(), v.clone());
        }
    }
    manifest.finish(&out)
}
