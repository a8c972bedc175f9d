//! The training loop: `P × Q` batches, live soft targets, analytic
//! gradients, Adam with the warmup/step schedule, and per-epoch retrieval
//! metrics on the query/gallery split.

use std::io::Write;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::config::TrainConfig;
use crate::data::{self, Sample, Split};
use crate::embed::EmbedderParams;
use crate::error::{Error, Result};
use crate::eval::{self, EvalReport, Tag};
use crate::geometry::normalize;
use crate::loss::{self, ClassifierParams, LossConfig};
use crate::optim::AdamState;
use crate::sampler::{pk_sample, IdentityIndex};
use crate::scalar::axpy;

const INIT_STREAM: u64 = 10;
const SAMPLER_STREAM: u64 = 11;

/// RNG for one training component, independent of the others.
pub fn component_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Trained embedder plus classifier centers, with the config that made it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub config: TrainConfig,
    pub seed: u64,
    pub embedder: EmbedderParams<f64>,
    pub classifier: ClassifierParams<f64>,
}

impl Model {
    /// Random initialization: fan-in scaled embedder, identity centers
    /// uniform on the sphere, viewpoint centers optionally near their
    /// identity center.
    pub fn init(config: &TrainConfig, num_ids: usize, num_views: usize) -> Result<Self> {
        let m = &config.model;
        let seed = config.train.seed;
        let mut rng = component_rng(seed, INIT_STREAM);
        let embedder = EmbedderParams::init(m.raw_dim, m.hidden, m.embed_dim, &mut rng);
        let d = m.embed_dim;
        let mut gaussian = |n: usize| -> Vec<f64> { (0..n).map(|_| StandardNormal.sample(&mut rng)).collect() };

        let mut identity = Vec::with_capacity(num_ids * d);
        for _ in 0..num_ids {
            identity.extend(normalize(&gaussian(d))?);
        }
        let mut view = Vec::with_capacity(num_ids * num_views * d);
        for k in 0..num_ids {
            for _ in 0..num_views {
                let g = gaussian(d);
                let u = if m.view_init_near_identity {
                    let w = &identity[k * d..(k + 1) * d];
                    w.iter().zip(&g).map(|(a, b)| a + m.view_init_noise * b).collect::<Vec<_>>()
                } else {
                    g
                };
                view.extend(normalize(&u)?);
            }
        }
        let classifier = ClassifierParams::new(d, num_ids, num_views, identity, view)?;
        Ok(Self { config: config.clone(), seed, embedder, classifier })
    }

    pub fn embed(&self, raw: &[f64]) -> Result<Vec<f64>> {
        crate::embed::embed(&self.embedder, raw)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = self.to_json()?;
        text.push('\n');
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let model: Self = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        model.embedder.validate()?;
        Ok(model)
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let [w1, b1, w2, b2] = self.embedder.tensors_mut();
        vec![w1, b1, w2, b2, &mut self.classifier.identity, &mut self.classifier.view]
    }

    fn shapes(&self) -> Vec<usize> {
        let mut s: Vec<usize> = self.embedder.tensors().iter().map(|t| t.len()).collect();
        s.push(self.classifier.identity.len());
        s.push(self.classifier.view.len());
        s
    }

    /// Retrieval metrics of this model on the query/gallery splits.
    pub fn evaluate(&self, samples: &[Sample]) -> Result<EvalReport> {
        let mut q = (Vec::new(), Vec::new());
        let mut g = (Vec::new(), Vec::new());
        for s in samples {
            let tag = Tag { identity: s.identity, camera: s.camera, viewpoint: s.viewpoint };
            let bucket = match s.split {
                Split::Query => &mut q,
                Split::Gallery => &mut g,
                Split::Train => continue,
            };
            bucket.0.push(self.embed(&s.raw)?);
            bucket.1.push(tag);
        }
        let views = data::num_views(samples).max(1);
        eval::evaluate(&q.0, &q.1, &g.0, &g.1, views, self.config.train.max_rank)
    }
}

/// One row of the per-epoch metrics table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub epoch: usize,
    pub loss_y: f64,
    pub loss_v: f64,
    pub loss_r: f64,
    pub loss_total: f64,
    pub map: f64,
    pub rank1: f64,
    pub rank5: f64,
    pub lr: f64,
}

pub const METRICS_HEADER: &str = "epoch,loss_y,loss_v,loss_r,loss_total,map,rank1,rank5,lr";

pub fn write_metrics_csv<W: Write>(rows: &[MetricsRow], mut out: W) -> std::io::Result<()> {
    writeln!(out, "{METRICS_HEADER}")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            r.epoch, r.loss_y, r.loss_v, r.loss_r, r.loss_total, r.map, r.rank1, r.rank5, r.lr
        )?;
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Model,
    pub metrics: Vec<MetricsRow>,
    pub report: EvalReport,
}

#[derive(Debug, Clone, Copy, Default)]
struct LossParts {
    identity: f64,
    view: f64,
    center: f64,
}

/// Batch-mean loss parts and gradients over `batch` (sample indices).
fn batch_gradient(
    model: &Model,
    samples: &[Sample],
    batch: &[usize],
    cfg: &LossConfig<f64>,
    with_grad: bool,
) -> Result<(LossParts, Vec<Vec<f64>>)> {
    let mode = model.config.loss.label_mode;
    let params = &model.classifier;
    let mut emb_grad = EmbedderParams::zeros(model.embedder.raw_dim, model.embedder.hidden, model.embedder.dim);
    let mut grad_identity = vec![0.0; params.identity.len()];
    let mut grad_view = vec![0.0; params.view.len()];
    let mut parts = LossParts::default();

    for &i in batch {
        let s = &samples[i];
        let trace = model.embedder.forward(&s.raw)?;
        let x = &trace.output;
        let targets = loss::build_targets(x, s.identity, s.viewpoint, params, cfg, mode)?;
        let out = loss::loss_with_targets(x, s.identity, s.viewpoint, params, cfg, mode, &targets, false)?;
        parts.identity += out.identity_loss;
        parts.view += out.view_loss;
        if with_grad {
            model.embedder.backward(&trace, &out.grad_x, &mut emb_grad);
            axpy(1.0, &out.grad_identity, &mut grad_identity);
            axpy(1.0, &out.grad_view, &mut grad_view);
        }
    }

    let inv = 1.0 / batch.len() as f64;
    parts.identity *= inv;
    parts.view *= inv;
    let mut grads: Vec<Vec<f64>> = emb_grad.tensors().iter().map(|t| t.to_vec()).collect();
    grads.push(grad_identity);
    grads.push(grad_view);
    for g in &mut grads {
        g.iter_mut().for_each(|x| *x *= inv);
    }
    if mode.uses_center_reg() {
        let reg = loss::center_regularization(params);
        parts.center = reg.value;
        if with_grad {
            let n = grads.len();
            axpy(cfg.beta, &reg.grad_identity, &mut grads[n - 2]);
            axpy(cfg.beta, &reg.grad_view, &mut grads[n - 1]);
        }
    }
    Ok((parts, grads))
}

fn metrics_row(
    model: &Model,
    samples: &[Sample],
    train_idx: &[usize],
    cfg: &LossConfig<f64>,
    epoch: usize,
    lr: f64,
) -> Result<(MetricsRow, EvalReport)> {
    let (parts, _) = batch_gradient(model, samples, train_idx, cfg, false)?;
    let report = model.evaluate(samples)?;
    let row = MetricsRow {
        epoch,
        loss_y: parts.identity,
        loss_v: parts.view,
        loss_r: parts.center,
        loss_total: parts.identity + parts.view + cfg.beta * parts.center,
        map: report.map,
        rank1: report.rank(1),
        rank5: report.rank(5),
        lr,
    };
    Ok((row, report))
}

/// Trains from scratch. Row 0 of the metrics is the untrained model; row `e`
/// is measured after epoch `e`. Losses are full-pass means over the training
/// split with targets built from the current predictions.
pub fn train(config: &TrainConfig, samples: &[Sample]) -> Result<TrainOutcome> {
    config.validate()?;
    let raw_dim = samples.first().map(|s| s.raw.len()).unwrap_or(0);
    if raw_dim != config.model.raw_dim || samples.iter().any(|s| s.raw.len() != raw_dim) {
        return Err(Error::InvalidConfig(format!(
            "dataset raw dimension {raw_dim} does not match model raw_dim {}",
            config.model.raw_dim
        )));
    }
    let (num_ids, num_views) = (data::num_ids(samples), data::num_views(samples));
    if config.loss.label_mode.uses_view_loss() && num_views < 2 {
        return Err(Error::InvalidConfig("viewpoint-aware loss needs at least two viewpoints".into()));
    }
    let num_views = num_views.max(1);

    let cfg = config.loss_config();
    let schedule = config.schedule();
    let index = IdentityIndex::from_train(samples);
    let train_idx: Vec<usize> = (0..samples.len()).filter(|&i| samples[i].split == Split::Train).collect();
    if index.num_identities() < config.train.p {
        return Err(Error::TooFewIdentities { needed: config.train.p, found: index.num_identities() });
    }
    let steps = train_idx.len().div_ceil(config.batch_size());

    let mut model = Model::init(config, num_ids, num_views)?;
    let mut adam = AdamState::new(config.adam(), &model.shapes());
    let mut sampler_rng = component_rng(config.train.seed, SAMPLER_STREAM);

    let (row, mut report) = metrics_row(&model, samples, &train_idx, &cfg, 0, schedule.lr_at(0))?;
    let mut metrics = vec![row];

    for epoch in 0..config.train.epochs {
        let lr = schedule.lr_at(epoch);
        for step in 0..steps {
            let batch = pk_sample(&index, config.train.p, config.train.q, &mut sampler_rng)?;
            let (parts, grads) = batch_gradient(&model, samples, &batch, &cfg, true)?;
            let finite = [parts.identity, parts.view, parts.center].iter().all(|v| v.is_finite())
                && grads.iter().flatten().all(|g| g.is_finite());
            if !finite {
                return Err(Error::NonFiniteLoss { epoch: epoch + 1, step });
            }
            let grad_refs: Vec<&[f64]> = grads.iter().map(|g| g.as_slice()).collect();
            adam.step(&mut model.tensors_mut(), &grad_refs, lr)?;
            model.classifier.renormalize()?;
        }
        let (row, r) = metrics_row(&model, samples, &train_idx, &cfg, epoch + 1, lr)?;
        log::debug!("epoch {} loss {:.4} mAP {:.4}", row.epoch, row.loss_total, row.map);
        metrics.push(row);
        report = r;
    }
    Ok(TrainOutcome { model, metrics, report })
}
