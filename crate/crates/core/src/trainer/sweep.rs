use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{evaluate, TrainConfig, Trainer};
use crate::data::{Split, WindowedDataset};
use crate::error::{Error, Result};
use crate::metrics::MeanStd;
use crate::par;

/// The γ grid of the reference tables.
pub const PAPER_GAMMAS: [f64; 6] = [0.0, 0.2, 0.4, 0.6, 0.8, 1.0];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    /// `baseline` or `gamma=<γ>`.
    pub label: String,
    pub gamma: Option<f64>,
    pub rmse: MeanStd,
    pub per_seed: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub split: Split,
    pub seeds: Vec<u64>,
    pub rows: Vec<SweepRow>,
}

impl SweepTable {
    pub fn row(&self, gamma: Option<f64>) -> Option<&SweepRow> {
        self.rows.iter().find(|r| r.gamma == gamma)
    }

    /// One row per model: `model,gamma,mean,std,mean_std,seed_<s>…`.
    pub fn to_long_csv(&self) -> String {
        let mut out = String::from("model,gamma,mean,std,mean_std");
        for s in &self.seeds {
            out.push_str(&format!(",seed_{s}"));
        }
        out.push('\n');
        for r in &self.rows {
            let gamma = r.gamma.map(|g| g.to_string()).unwrap_or_default();
            out.push_str(&format!("{},{gamma},{},{},{}", r.label, r.rmse.mean, r.rmse.std, r.rmse));
            for v in &r.per_seed {
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
        }
        out
    }

    /// Table layout: one column per model, one `mean±std` row per split.
    pub fn to_wide_csv(&self) -> String {
        let header: Vec<&str> = self.rows.iter().map(|r| r.label.as_str()).collect();
        let cells: Vec<String> = self.rows.iter().map(|r| r.rmse.to_string()).collect();
        format!("split,{}\n{},{}\n", header.join(","), self.split, cells.join(","))
    }

    pub fn write(&self, long: &Path, wide: &Path) -> Result<()> {
        std::fs::write(long, self.to_long_csv()).map_err(|e| Error::io(long, e))?;
        std::fs::write(wide, self.to_wide_csv()).map_err(|e| Error::io(wide, e))
    }
}

fn gamma_label(gamma: Option<f64>) -> String {
    match gamma {
        None => "baseline".into(),
        Some(g) => format!("gamma={g}"),
    }
}

/// Trains a baseline and one model per γ for every seed, and reports the
/// RMSE on `split` as `mean±std` over seeds. Runs are independent and may
/// execute in parallel; aggregation follows the input order.
pub fn sweep_gamma(
    config: &TrainConfig,
    data: &WindowedDataset,
    gammas: &[f64],
    seeds: &[u64],
    split: Split,
) -> Result<SweepTable> {
    if let Some(g) = gammas.iter().find(|g| !(0.0..=1.0).contains(*g)) {
        return Err(Error::Parameter(format!("gamma {g} outside [0, 1]")));
    }
    if seeds.is_empty() {
        return Err(Error::Parameter("sweep needs at least one seed".into()));
    }
    let variants: Vec<Option<f64>> = std::iter::once(None).chain(gammas.iter().copied().map(Some)).collect();
    let jobs: Vec<(Option<f64>, u64)> = variants
        .iter()
        .flat_map(|&g| seeds.iter().map(move |&s| (g, s)))
        .collect();
    let results = par::map(&jobs, config.execution, |&(gamma, seed)| {
        let mut c = config.clone();
        c.seed = seed;
        c.rco_enabled = gamma.is_some();
        c.gamma = gamma.unwrap_or(config.gamma);
        run_and_score(&c, data, split)
    });
    let mut scores = results.into_iter();
    let mut rows = Vec::with_capacity(variants.len());
    for gamma in variants {
        let per_seed = scores.by_ref().take(seeds.len()).collect::<Result<Vec<f64>>>()?;
        rows.push(SweepRow {
            label: gamma_label(gamma),
            gamma,
            rmse: MeanStd::of(&per_seed),
            per_seed,
        });
    }
    Ok(SweepTable {
        split,
        seeds: seeds.to_vec(),
        rows,
    })
}

fn run_and_score(config: &TrainConfig, data: &WindowedDataset, split: Split) -> Result<f64> {
    let started = Instant::now();
    let mut trainer = Trainer::new(config, data)?;
    for _ in 0..config.epochs {
        trainer.run_epoch(data)?;
    }
    let eval = evaluate(&trainer.model, data, split, trainer.eval_mode(), config.execution)?;
    log::info!(
        "sweep run rco={} gamma={} seed={} rmse={:.6} ({:.1}s)",
        config.rco_enabled,
        config.gamma,
        config.seed,
        eval.rmse,
        started.elapsed().as_secs_f64()
    );
    Ok(eval.rmse)
}
