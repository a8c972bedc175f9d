//! Central finite-difference verification of every analytic gradient.
//!
//! Random instances (d = 8, K = 4, V = 3) cover each margin mode and label
//! mode. Soft targets are built once at the unperturbed point and held fixed,
//! matching the stop-gradient used in training. The error measure for one
//! check is `max|analytic - numeric| / max(max|analytic|, max|numeric|)`.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::embed::EmbedderParams;
use crate::error::Result;
use crate::geometry::normalize;
use crate::labels;
use crate::loss::{self, ClassifierParams, LabelMode, LossConfig, MarginMode, Targets};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradcheckOptions {
    pub seed: u64,
    pub step: f64,
    pub tolerance: f64,
    /// Instances per (margin mode, label mode) combination.
    pub instances_per_combo: usize,
    /// Relative corruption added to one analytic entry; a negative control.
    pub perturb: f64,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        Self { seed: 0, step: 1e-6, tolerance: 1e-5, instances_per_combo: 6, perturb: 0.0 }
    }
}

pub const DIM: usize = 8;
pub const NUM_IDS: usize = 4;
pub const NUM_VIEWS: usize = 3;
const RAW_DIM: usize = 6;
const HIDDEN: usize = 7;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComponentReport {
    pub name: &'static str,
    pub checks: usize,
    pub max_rel_error: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradcheckReport {
    pub seed: u64,
    pub tolerance: f64,
    pub instances: usize,
    pub components: Vec<ComponentReport>,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.components.iter().all(|c| c.passed)
    }
}

impl fmt::Display for GradcheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "gradcheck seed={} instances={} tolerance={:e}", self.seed, self.instances, self.tolerance)?;
        for c in &self.components {
            writeln!(
                f,
                "{:<12} checks={:<4} max_rel_err={:.3e} {}",
                c.name,
                c.checks,
                c.max_rel_error,
                if c.passed { "PASS" } else { "FAIL" }
            )?;
        }
        write!(f, "{}", if self.passed() { "all components passed" } else { "gradient check FAILED" })
    }
}

/// Central differences of `f` at `theta`.
pub fn central_difference(theta: &[f64], h: f64, f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = theta.to_vec();
    (0..theta.len())
        .map(|i| {
            probe[i] = theta[i] + h;
            let up = f(&probe);
            probe[i] = theta[i] - h;
            let down = f(&probe);
            probe[i] = theta[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// `max|a - n| / max(max|a|, max|n|)`, zero when both vanish.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    if analytic.len() != numeric.len() || analytic.iter().chain(numeric).any(|x| !x.is_finite()) {
        return f64::INFINITY;
    }
    let inf = |v: &[f64]| v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let diff = analytic.iter().zip(numeric).fold(0.0f64, |m, (a, n)| m.max((a - n).abs()));
    let scale = inf(analytic).max(inf(numeric));
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

struct Instance {
    cfg: LossConfig<f64>,
    mode: LabelMode,
    params: ClassifierParams<f64>,
    embedder: EmbedderParams<f64>,
    raw: Vec<f64>,
    x: Vec<f64>,
    y: usize,
    v: usize,
}

fn gaussian(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

fn unit_rows(rng: &mut ChaCha8Rng, rows: usize, d: usize) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(rows * d);
    for _ in 0..rows {
        out.extend(normalize(&gaussian(rng, d))?);
    }
    Ok(out)
}

fn instance(rng: &mut ChaCha8Rng, margin_mode: MarginMode, mode: LabelMode) -> Result<Instance> {
    let cfg = LossConfig {
        scale: rng.random_range(4.0..40.0),
        margin: rng.random_range(0.05..0.6),
        margin_mode,
        alpha: rng.random_range(0.0..=0.5),
        beta: rng.random_range(0.0..=1.0),
        lsr_eps: rng.random_range(0.0..0.5),
    };
    let params = ClassifierParams::new(
        DIM,
        NUM_IDS,
        NUM_VIEWS,
        unit_rows(rng, NUM_IDS, DIM)?,
        unit_rows(rng, NUM_IDS * NUM_VIEWS, DIM)?,
    )?;
    let mut embedder = EmbedderParams::init(RAW_DIM, HIDDEN, DIM, rng);
    for b in embedder.b1.iter_mut().chain(embedder.b2.iter_mut()) {
        *b = rng.random_range(-0.3..0.3);
    }
    let raw = gaussian(rng, RAW_DIM);
    let x = normalize(&gaussian(rng, DIM))?;
    let y = rng.random_range(0..NUM_IDS);
    let v = rng.random_range(0..NUM_VIEWS);
    Ok(Instance { cfg, mode, params, embedder, raw, x, y, v })
}

fn with_centers(base: &ClassifierParams<f64>, identity: Option<&[f64]>, view: Option<&[f64]>) -> ClassifierParams<f64> {
    let mut p = base.clone();
    if let Some(w) = identity {
        p.identity.copy_from_slice(w);
    }
    if let Some(u) = view {
        p.view.copy_from_slice(u);
    }
    p
}

fn corrupt(analytic: &mut [f64], perturb: f64) {
    if perturb != 0.0 {
        let scale = analytic.iter().fold(0.0f64, |m, x| m.max(x.abs())).max(1.0);
        analytic[0] += perturb * scale;
    }
}

/// Runs every component check and returns the worst error for each.
pub fn gradcheck(opts: &GradcheckOptions) -> Result<GradcheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let h = opts.step;
    let names = ["identity", "viewpoint", "center_reg", "combined", "end_to_end"];
    let mut worst = [0.0f64; 5];
    let mut counts = [0usize; 5];
    let mut instances = 0;

    for margin_mode in MarginMode::ALL {
        for mode in LabelMode::ALL {
            for _ in 0..opts.instances_per_combo {
                let inst = instance(&mut rng, margin_mode, mode)?;
                instances += 1;
                for (slot, err) in check_instance(&inst, h, opts.perturb)?.into_iter().enumerate() {
                    worst[slot] = worst[slot].max(err);
                    counts[slot] += 1;
                }
            }
        }
    }

    let components = names
        .iter()
        .zip(worst.iter().zip(&counts))
        .map(|(&name, (&err, &checks))| ComponentReport {
            name,
            checks,
            max_rel_error: err,
            passed: err < opts.tolerance && err.is_finite(),
        })
        .collect();
    Ok(GradcheckReport { seed: opts.seed, tolerance: opts.tolerance, instances, components })
}

fn check_instance(inst: &Instance, h: f64, perturb: f64) -> Result<[f64; 5]> {
    let Instance { cfg, mode, params, embedder, raw, x, y, v } = inst;
    let (y, v, mode) = (*y, *v, *mode);
    let d = x.len();
    let nw = params.identity.len();
    let targets = loss::build_targets(x, y, v, params, cfg, mode)?;
    let view_target = match &targets.view {
        Some(t) => t.clone(),
        None => labels::hard_view(y, v, params.num_ids, params.num_views)?,
    };

    // identity term over (x, W)
    let id = loss::identity_term(x, y, params, cfg, &targets.identity)?;
    let mut analytic = [id.grad_x.clone(), id.grad_centers.clone()].concat();
    corrupt(&mut analytic, perturb);
    let theta = [x.clone(), params.identity.clone()].concat();
    let numeric = central_difference(&theta, h, |t| {
        let p = with_centers(params, Some(&t[d..]), None);
        loss::identity_term(&t[..d], y, &p, cfg, &targets.identity).map(|o| o.value).unwrap_or(f64::NAN)
    });
    let e_identity = relative_error(&analytic, &numeric);

    // viewpoint term over (x, U)
    let vt = loss::view_term(x, y, v, params, cfg, &view_target)?;
    let mut analytic = [vt.grad_x.clone(), vt.grad_centers.clone()].concat();
    corrupt(&mut analytic, perturb);
    let theta = [x.clone(), params.view.clone()].concat();
    let numeric = central_difference(&theta, h, |t| {
        let p = with_centers(params, None, Some(&t[d..]));
        loss::view_term(&t[..d], y, v, &p, cfg, &view_target).map(|o| o.value).unwrap_or(f64::NAN)
    });
    let e_view = relative_error(&analytic, &numeric);

    // center regularizer over (W, U)
    let reg = loss::center_regularization(params);
    let mut analytic = [reg.grad_identity.clone(), reg.grad_view.clone()].concat();
    corrupt(&mut analytic, perturb);
    let theta = [params.identity.clone(), params.view.clone()].concat();
    let numeric = central_difference(&theta, h, |t| {
        loss::center_regularization(&with_centers(params, Some(&t[..nw]), Some(&t[nw..]))).value
    });
    let e_center = relative_error(&analytic, &numeric);

    // combined objective over (x, W, U)
    let full = loss::loss_with_targets(x, y, v, params, cfg, mode, &targets, true)?;
    let mut analytic = [full.grad_x.clone(), full.grad_identity.clone(), full.grad_view.clone()].concat();
    corrupt(&mut analytic, perturb);
    let theta = [x.clone(), params.identity.clone(), params.view.clone()].concat();
    let numeric = central_difference(&theta, h, |t| {
        let p = with_centers(params, Some(&t[d..d + nw]), Some(&t[d + nw..]));
        loss::loss_with_targets(&t[..d], y, v, &p, cfg, mode, &targets, true).map(|o| o.value).unwrap_or(f64::NAN)
    });
    let e_combined = relative_error(&analytic, &numeric);

    let e_end = end_to_end(embedder, raw, y, v, params, cfg, mode, h, perturb)?;
    Ok([e_identity, e_view, e_center, e_combined, e_end])
}

/// Combined loss composed with the embedder, over embedder weights and centers.
#[allow(clippy::too_many_arguments)]
fn end_to_end(
    embedder: &EmbedderParams<f64>,
    raw: &[f64],
    y: usize,
    v: usize,
    params: &ClassifierParams<f64>,
    cfg: &LossConfig<f64>,
    mode: LabelMode,
    h: f64,
    perturb: f64,
) -> Result<f64> {
    let trace = embedder.forward(raw)?;
    let targets: Targets<f64> = loss::build_targets(&trace.output, y, v, params, cfg, mode)?;
    let out = loss::loss_with_targets(&trace.output, y, v, params, cfg, mode, &targets, true)?;
    let mut grads = EmbedderParams::zeros(embedder.raw_dim, embedder.hidden, embedder.dim);
    embedder.backward(&trace, &out.grad_x, &mut grads);

    let mut analytic: Vec<f64> = grads.tensors().concat();
    analytic.extend(&out.grad_identity);
    analytic.extend(&out.grad_view);
    corrupt(&mut analytic, perturb);

    let sizes: Vec<usize> = embedder.tensors().iter().map(|t| t.len()).collect();
    let mut theta: Vec<f64> = embedder.tensors().concat();
    theta.extend(&params.identity);
    theta.extend(&params.view);
    let n_emb: usize = sizes.iter().sum();
    let nw = params.identity.len();

    let numeric = central_difference(&theta, h, |t| {
        let mut e = embedder.clone();
        let mut offset = 0;
        for (tensor, &n) in e.tensors_mut().into_iter().zip(&sizes) {
            tensor.copy_from_slice(&t[offset..offset + n]);
            offset += n;
        }
        let p = with_centers(params, Some(&t[n_emb..n_emb + nw]), Some(&t[n_emb + nw..]));
        e.forward(raw)
            .and_then(|tr| loss::loss_with_targets(&tr.output, y, v, &p, cfg, mode, &targets, true))
            .map(|o| o.value)
            .unwrap_or(f64::NAN)
    });
    Ok(relative_error(&analytic, &numeric))
}
