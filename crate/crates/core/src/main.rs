use clap::Parser;
use std::path::PathBuf;
use std::process::ExitCode;
use wavemask::experiment::{self, ExperimentConfig, MANIFEST_FILE};

const EXIT_CHECK_FAILED: u8 = 1;
const EXIT_ERROR: u8 = 2;

/// Run a wavefront-randomization experiment described by a JSON config.
#[derive(Parser, Debug)]
#[command(name = "wavemask", version)]
struct Cli {
    /// Experiment config (JSON).
    config: PathBuf,
    /// Override the config's master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the config's output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn configure_threads() -> Result<(), String> {
    let Ok(raw) = std::env::var("WAVEMASK_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| format!("WAVEMASK_THREADS must be a positive integer, got {raw:?}"))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| e.to_string())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(e) = configure_threads() {
        eprintln!("error: {e}");
        return ExitCode::from(EXIT_ERROR);
    }
    let mut config = match ExperimentConfig::load(&cli.config) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_ERROR);
        }
    };
    if let Some(seed) = cli.seed {
        config.master_seed = seed;
    }
    if let Some(out) = cli.out {
        config.output_dir = Some(out);
    }
    match experiment::run(&config) {
        Ok(manifest) => {
            let failed = manifest.failed_checks();
            let dir = config.output_dir();
            if failed.is_empty() {
                println!("ok: {} files, manifest at {}", manifest.files.len(), dir.join(MANIFEST_FILE).display());
                ExitCode::SUCCESS
            } else {
                for name in failed {
                    eprintln!("check failed: {name}");
                }
                eprintln!("details in {}", dir.join("report.json").display());
                ExitCode::from(EXIT_CHECK_FAILED)
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_ERROR)
        }
    }
}
