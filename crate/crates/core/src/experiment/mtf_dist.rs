use super::{derive_seed, slack_z, tag, CellRecord, ExperimentConfig, ExperimentKind, OutputDir, Result, RunManifest};
use crate::data_io::{self, LongRow};
use crate::optics::{make_pupil, seidel_phase_1d, MaskSpec};
use crate::transfer::{monte_carlo_mtf_with_cap, mtf};
use serde::Serialize;

#[derive(Debug, Clone, Serialize)]
struct CellSummary {
    id: String,
    aberration: &'static str,
    strength: f64,
    stream_seed: u64,
    unmasked: Vec<f64>,
    mean: Vec<f64>,
    std_error: Vec<f64>,
    q05: Vec<f64>,
    q50: Vec<f64>,
    q95: Vec<f64>,
}

/// Largest per-frequency pooled z between two cells' ensemble means.
#[derive(Debug, Clone, Serialize)]
struct PairComparison {
    a: String,
    b: String,
    max_z: f64,
    frequencies_beyond_3_se: usize,
}

#[derive(Debug, Clone, Serialize)]
struct Summary {
    mask: MaskSpec,
    period: usize,
    trials: usize,
    frequencies: Vec<usize>,
    cells: Vec<CellSummary>,
    pairwise: Vec<PairComparison>,
}

/// Per (aberration, strength): the unmasked MTF and the masked ensemble
/// statistics for `n = 0..=N/2`, one CSV per cell plus `summary.json`.
pub fn run_mtf_dist(config: &ExperimentConfig) -> Result<RunManifest> {
    config.expect_kind(ExperimentKind::MtfDist)?;
    let mut out = OutputDir::create(config.output_dir())?;
    let mut manifest = RunManifest::new(config);
    let period = config.period;
    let freqs: Vec<usize> = (0..=period / 2).collect();
    let mut cells = Vec::new();

    for &ab in &config.aberrations {
        for &strength in &config.strengths {
            let id = format!("{}_{}", ab.name(), tag(strength));
            let seed = derive_seed(config.master_seed, &format!("mtf_dist/{id}"));
            let phase = seidel_phase_1d(&ab.coefficients(strength), period)?;
            let pupil = make_pupil(period, &phase)?;
            let unmasked = mtf(&pupil);
            let ens = monte_carlo_mtf_with_cap(&pupil, config.mask, config.trials, seed, 0)?;

            let mut rows = Vec::new();
            let row = |masked: bool, metric: &str, n: usize, value: f64| LongRow {
                experiment: "mtf_dist".to_string(),
                aberration: ab.name().to_string(),
                strength,
                sigma: 0.0,
                masked,
                n_or_metric: format!("{metric}@{n}"),
                value,
            };
            for &n in &freqs {
                rows.push(row(false, "mtf", n, unmasked.get(n)));
            }
            for (metric, values) in [
                ("mean", &ens.mean),
                ("stderr", &ens.std_error),
                ("q05", &ens.q05),
                ("q50", &ens.q50),
                ("q95", &ens.q95),
            ] {
                for &n in &freqs {
                    rows.push(row(true, metric, n, values[n]));
                }
            }
            let rel = format!("cells/{id}.csv");
            data_io::write_long_csv(&rows, out.file(&rel)?)?;
            manifest.cells.push(CellRecord {
                id: id.clone(),
                stream_seed: seed,
                trials: config.trials as u64,
                files: vec![rel],
            });
            let pick = |v: &[f64]| freqs.iter().map(|&n| v[n]).collect::<Vec<_>>();
            cells.push(CellSummary {
                id,
                aberration: ab.name(),
                strength,
                stream_seed: seed,
                unmasked: pick(unmasked.values()),
                mean: pick(&ens.mean),
                std_error: pick(&ens.std_error),
                q05: pick(&ens.q05),
                q50: pick(&ens.q50),
                q95: pick(&ens.q95),
            });
        }
    }

    let mut pairwise = Vec::new();
    for i in 0..cells.len() {
        for j in i + 1..cells.len() {
            let (a, b) = (&cells[i], &cells[j]);
            let zs: Vec<f64> = (0..freqs.len())
                .map(|k| slack_z((a.mean[k], a.std_error[k]), (b.mean[k], b.std_error[k])))
                .collect();
            pairwise.push(PairComparison {
                a: a.id.clone(),
                b: b.id.clone(),
                max_z: zs.iter().cloned().fold(0.0, f64::max),
                frequencies_beyond_3_se: zs.iter().filter(|&&z| z > 3.0).count(),
            });
        }
    }
    let summary = Summary {
        mask: config.mask,
        period,
        trials: config.trials,
        frequencies: freqs,
        cells,
        pairwise,
    };
    data_io::write_json(&summary, out.file("summary.json")?)?;
    manifest.finish(&out)
}
