use super::{derive_seed, tag, AberrationKind, CellRecord, ExperimentConfig, ExperimentKind, OutputDir, Result, RunManifest};
use crate::data_io::{self, LongRow};
use crate::imaging::{simulate_reconstruction, Image2D, ReconOutcome};
use crate::optics::{sample_mask, MaskSample};
use crate::rand_stats::{stream, StreamKey};
use crate::scene;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

#[derive(Debug, Clone, Copy)]
struct Cell {
    aberration: AberrationKind,
    strength: f64,
    sigma: f64,
    masked: bool,
}

impl Cell {
    fn id(&self) -> String {
        format!(
            "{}_{}_sigma{}_{}",
            self.aberration.name(),
            tag(self.strength),
            tag(self.sigma),
            if self.masked { "masked" } else { "unmasked" }
        )
    }

    /// Masked and unmasked twins share the noise stream.
    fn noise_seed(&self, master: u64) -> u64 {
        derive_seed(
            master,
            &format!("recon/noise/{}/{}/{}", self.aberration.name(), tag(self.strength), tag(self.sigma)),
        )
    }
}

#[derive(Debug, Clone, Serialize)]
struct CellResult {
    id: String,
    aberration: &'static str,
    strength: f64,
    sigma: f64,
    masked: bool,
    ssim: f64,
    measurement_ssim: f64,
    nsr: f64,
    psf_sigma: f64,
    noise_seed: u64,
}

/// Load the configured scene (bundled when unset) at the sweep's grid size.
pub fn load_scene(config: &ExperimentConfig) -> Result<Image2D> {
    let img = match &config.scene {
        Some(path) => data_io::load_pgm(path)?,
        None => scene::cameraman()?,
    };
    let side = config.recon.grid_side;
    Ok(img.resample(side, side)?)
}

/// The sweep's single mask realization.
pub fn sweep_mask(config: &ExperimentConfig) -> Result<(MaskSample, u64)> {
    let seed = derive_seed(config.master_seed, "recon/mask");
    let side = config.recon.grid_side;
    let mask = sample_mask(config.mask, side * side, &mut stream(StreamKey::new(seed, 0)))?;
    Ok((mask, seed))
}

/// Every (aberration, strength, sigma) × {unmasked, masked} cell: PGM
/// exports of measurement, PSF and estimate, plus `recon.csv` and
/// `summary.json`.
pub fn run_recon_sweep(config: &ExperimentConfig) -> Result<RunManifest> {
    config.expect_kind(ExperimentKind::ReconSweep)?;
    let scene = load_scene(config)?;
    let (mask, mask_seed) = sweep_mask(config)?;

    let mut cells = Vec::new();
    for &aberration in &config.aberrations {
        for &strength in &config.strengths {
            for &sigma in &config.sigmas {
                for masked in [false, true] {
                    cells.push(Cell { aberration, strength, sigma, masked });
                }
            }
        }
    }
    let outcomes: Vec<ReconOutcome> = cells
        .par_iter()
        .map(|c| {
            let mut rng = stream(StreamKey::new(c.noise_seed(config.master_seed), 0));
            simulate_reconstruction(
                &scene,
                &c.aberration.coefficients(c.strength),
                c.masked.then_some(&mask),
                c.sigma,
                &config.recon,
                &mut rng,
            )
        })
        .collect::<std::result::Result<_, _>>()?;

    let mut out = OutputDir::create(config.output_dir())?;
    let mut manifest = RunManifest::new(config);
    let mut rows = Vec::new();
    let mut results = Vec::new();
    for (c, o) in cells.iter().zip(&outcomes) {
        let id = c.id();
        let noise_seed = c.noise_seed(config.master_seed);
        let mut files = Vec::new();
        if config.write_images {
            files.extend(out.pgm(&format!("images/{id}_measurement.pgm"), &o.measurement)?);
            files.extend(out.pgm(&format!("images/{id}_psf.pgm"), o.psf.image())?);
            files.extend(out.pgm(&format!("images/{id}_estimate.pgm"), &o.estimate)?);
        }
        for (metric, value) in [
            ("ssim", o.ssim),
            ("measurement_ssim", o.measurement_ssim),
            ("nsr", o.nsr),
            ("psf_sigma", o.psf_sigma),
            ("noise_seed", noise_seed as f64),
        ] {
            rows.push(LongRow {
                experiment: "recon_sweep".to_string(),
                aberration: c.aberration.name().to_string(),
                strength: c.strength,
                sigma: c.sigma,
                masked: c.masked,
                n_or_metric: metric.to_string(),
                value,
            });
        }
        manifest.cells.push(CellRecord {
            id: id.clone(),
            stream_seed: noise_seed,
            trials: 1,
            files,
        });
        results.push(CellResult {
            id,
            aberration: c.aberration.name(),
            strength: c.strength,
            sigma: c.sigma,
            masked: c.masked,
            ssim: o.ssim,
            measurement_ssim: o.measurement_ssim,
            nsr: o.nsr,
            psf_sigma: o.psf_sigma,
            noise_seed,
        });
    }
    data_io::write_long_csv(&rows, out.file("recon.csv")?)?;
    let scene_source = match &config.scene {
        Some(p) => p.display().to_string(),
        None => "bundled:cameraman_256".to_string(),
    };
    let summary = json!({
        "scene": scene_source,
        "mask": config.mask,
        "mask_stream_seed": mask_seed,
        "settings": config.recon,
        "cells": results,
    });
    data_io::write_json(&summary, out.file("summary.json")?)?;
    manifest.notes.insert("mask_stream_seed".into(), json!(mask_seed));
    manifest.finish(&out)
}
