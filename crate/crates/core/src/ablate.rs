//! Runs several loss variants over a shared seed set and summarizes them.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::TrainConfig;
use crate::data::Sample;
use crate::error::Result;
use crate::loss::LabelMode;
use crate::train::train;

/// Final numbers of one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub variant: LabelMode,
    pub seed: u64,
    pub map: f64,
    pub rank1: f64,
    pub rank5: f64,
    pub initial_loss: f64,
    pub final_loss: f64,
    /// Mean cosine between viewpoint centers and their identity center.
    pub center_cosine: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: LabelMode,
    pub map_mean: f64,
    pub map_sd: f64,
    pub rank1_mean: f64,
    pub rank1_sd: f64,
    pub runs: Vec<RunResult>,
}

/// Mean and sample standard deviation (zero for a single value).
pub fn mean_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Trains `base` with its label mode replaced by `variant` and its seed by `seed`.
pub fn run_variant(base: &TrainConfig, samples: &[Sample], variant: LabelMode, seed: u64) -> Result<RunResult> {
    let mut cfg = base.clone();
    cfg.loss.label_mode = variant;
    cfg.train.seed = seed;
    let out = train(&cfg, samples)?;
    let first = out.metrics.first().expect("initial row");
    let last = out.metrics.last().expect("initial row");
    Ok(RunResult {
        variant,
        seed,
        map: last.map,
        rank1: last.rank1,
        rank5: last.rank5,
        initial_loss: first.loss_total,
        final_loss: last.loss_total,
        center_cosine: out.model.classifier.mean_center_cosine(),
    })
}

/// One row per listed variant, in order; every variant sees the same seeds.
pub fn ablate(base: &TrainConfig, samples: &[Sample], variants: &[LabelMode], seeds: &[u64]) -> Result<Vec<AblationRow>> {
    let jobs: Vec<(LabelMode, u64)> = variants.iter().flat_map(|&v| seeds.iter().map(move |&s| (v, s))).collect();
    let results: Vec<RunResult> =
        jobs.par_iter().map(|&(v, s)| run_variant(base, samples, v, s)).collect::<Result<_>>()?;
    Ok(results
        .chunks(seeds.len().max(1))
        .map(|runs| {
            let (map_mean, map_sd) = mean_sd(&runs.iter().map(|r| r.map).collect::<Vec<_>>());
            let (rank1_mean, rank1_sd) = mean_sd(&runs.iter().map(|r| r.rank1).collect::<Vec<_>>());
            AblationRow { variant: runs[0].variant, map_mean, map_sd, rank1_mean, rank1_sd, runs: runs.to_vec() }
        })
        .collect())
}

pub const TABLE_HEADER: &str = "variant,map_mean,map_sd,rank1_mean,rank1_sd,n_seeds";

pub fn write_table_csv<W: Write>(rows: &[AblationRow], mut out: W) -> std::io::Result<()> {
    writeln!(out, "{TABLE_HEADER}")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            r.variant,
            r.map_mean,
            r.map_sd,
            r.rank1_mean,
            r.rank1_sd,
            r.runs.len()
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate, SynthConfig};

    #[test]
    fn mean_sd_values() {
        assert_eq!(mean_sd(&[2.0]), (2.0, 0.0));
        let (m, s) = mean_sd(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert!((s - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn single_variant_and_duplicates() {
        let data = generate(&SynthConfig { num_ids: 5, per_cell: 4, raw_dim: 6, seed: 2, ..SynthConfig::default() }).unwrap();
        let mut cfg = TrainConfig::desk_scale();
        cfg.model.raw_dim = 6;
        cfg.model.hidden = 8;
        cfg.model.embed_dim = 4;
        cfg.train.p = 3;
        cfg.train.q = 2;
        cfg.train.epochs = 2;
        cfg.optim.warmup_epochs = 1;
        cfg.optim.milestones = vec![2];
        let one = ablate(&cfg, &data, &[LabelMode::Xent], &[0, 1]).unwrap();
        assert_eq!(one.len(), 1);
        assert_eq!(one[0].runs.len(), 2);
        let twice = ablate(&cfg, &data, &[LabelMode::VaReid, LabelMode::VaReid], &[0, 1]).unwrap();
        assert_eq!(twice[0].map_mean, twice[1].map_mean);
        assert_eq!(twice[0].runs, twice[1].runs);
        let mut buf = Vec::new();
        write_table_csv(&twice, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with(TABLE_HEADER));
        assert_eq!(text.lines().count(), 3);
    }
}
