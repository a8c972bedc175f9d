use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use log::info;
use vareid::gradcheck::{gradcheck, GradcheckOptions};
use vareid::{ablate, data, train, LabelMode, Model, SynthConfig, TrainConfig};

#[derive(Parser)]
#[command(name = "vareid", version, about = "Viewpoint-aware re-identification on synthetic data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset as JSON lines.
    Synth {
        #[arg(long, default_value_t = 20)]
        identities: usize,
        #[arg(long, default_value_t = 3)]
        viewpoints: usize,
        #[arg(long = "per-cell", default_value_t = 8)]
        per_cell: usize,
        #[arg(long = "raw-dim", default_value_t = 32)]
        raw_dim: usize,
        #[arg(long, default_value_t = 0.8)]
        offset: f64,
        #[arg(long, default_value_t = 0.2)]
        noise: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model and write it with its per-epoch metrics.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        metrics: PathBuf,
    },
    /// Evaluate a saved model on the query/gallery splits.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        report: PathBuf,
    },
    /// Train several loss variants over a seed set and tabulate them.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "xent,lsr,alsr,ly_lv,ly_lr,va_reid")]
        variants: Vec<LabelMode>,
        /// Number of seeds, counted up from the config seed.
        #[arg(long, default_value_t = 5)]
        seeds: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Reassign a fraction of training viewpoint labels at random.
    FlipViews {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        rate: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare analytic gradients against finite differences.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Corrupt one analytic entry by this relative amount.
        #[arg(long, default_value_t = 0.0, hide = true)]
        perturb: f64,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse().command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

fn load_samples(path: &Path) -> Result<Vec<vareid::Sample>> {
    data::load(path).with_context(|| format!("reading {}", path.display()))
}

fn load_config(path: &Path) -> Result<TrainConfig> {
    TrainConfig::load(path).with_context(|| format!("reading {}", path.display()))
}

fn run(command: Command) -> Result<ExitCode> {
    match command {
        Command::Synth { identities, viewpoints, per_cell, raw_dim, offset, noise, seed, out } => {
            let cfg = SynthConfig {
                num_ids: identities,
                num_views: viewpoints,
                per_cell,
                raw_dim,
                offset,
                noise,
                seed,
                ..SynthConfig::default()
            };
            let samples = data::generate(&cfg)?;
            data::save(&samples, &out)?;
            info!("wrote {} samples to {}", samples.len(), out.display());
        }
        Command::Train { config, data, out, metrics } => {
            let cfg = load_config(&config)?;
            let samples = load_samples(&data)?;
            let outcome = train::train(&cfg, &samples)?;
            outcome.model.save(&out)?;
            let mut w = create(&metrics)?;
            train::write_metrics_csv(&outcome.metrics, &mut w)?;
            w.flush()?;
            info!("final mAP {:.4}, rank-1 {:.4}", outcome.report.map, outcome.report.rank(1));
        }
        Command::Eval { model, data, report } => {
            let model = Model::load(&model).with_context(|| format!("reading {}", model.display()))?;
            let samples = load_samples(&data)?;
            let r = model.evaluate(&samples)?;
            let mut w = create(&report)?;
            serde_json::to_writer_pretty(&mut w, &r)?;
            writeln!(w)?;
            w.flush()?;
            info!("mAP {:.4}, rank-1 {:.4} over {} queries", r.map, r.rank(1), r.n_queries);
        }
        Command::Ablate { config, data, variants, seeds, out } => {
            if seeds == 0 {
                bail!("--seeds must be at least 1");
            }
            let cfg = load_config(&config)?;
            let samples = load_samples(&data)?;
            let seed_list: Vec<u64> = (0..seeds).map(|i| cfg.train.seed + i).collect();
            let rows = ablate::ablate(&cfg, &samples, &variants, &seed_list)?;
            let mut w = create(&out)?;
            ablate::write_table_csv(&rows, &mut w)?;
            w.flush()?;
            for r in &rows {
                info!("{:<8} mAP {:.4} ± {:.4}  rank-1 {:.4} ± {:.4}", r.variant, r.map_mean, r.map_sd, r.rank1_mean, r.rank1_sd);
            }
        }
        Command::FlipViews { data, rate, seed, out } => {
            let samples = load_samples(&data)?;
            let flipped = data::flip_viewpoint_labels(&samples, rate, seed)?;
            data::save(&flipped, &out)?;
        }
        Command::Gradcheck { seed, perturb } => {
            let report = gradcheck(&GradcheckOptions { seed, perturb, ..GradcheckOptions::default() })?;
            print!("{report}");
            if !report.passed() {
                return Ok(ExitCode::FAILURE);
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}
