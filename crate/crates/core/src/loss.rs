//! Angular-margin softmax heads over identity and viewpoint centers, the
//! center regularizer, and the combined objective with closed-form gradients.
//!
//! The identity head scores `x` against `K` identity centers `W_k`; the
//! viewpoint head scores it against `K·V` viewpoint centers `U_{k,v}`. Both
//! compute cosines against normalized centers and apply the margin to the
//! target logit only. Gradients treat the target distributions as constants.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{check_unit, clamp_unit, normalize_in_place};
use crate::labels::{self, LabelDistribution, ViewAwareIndex};
use crate::scalar::{axpy, dot, norm, Scalar};

/// Floor for `sin θ` in the angular-margin derivative.
const MIN_SIN: f64 = 1e-12;

/// Where the margin enters the target logit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MarginMode {
    /// `s·cos(θ + m)`
    #[default]
    ArcPlus,
    /// `s·cos(θ - m)`
    ArcMinus,
    /// `s·(cos θ - m)`
    CosSub,
}

impl MarginMode {
    pub const ALL: [MarginMode; 3] = [MarginMode::ArcPlus, MarginMode::ArcMinus, MarginMode::CosSub];

    /// Margin-adjusted cosine of the target and its derivative in `cos θ`.
    pub fn apply<T: Scalar>(self, cos: T, margin: T) -> (T, T) {
        if margin == T::zero() {
            return (cos, T::one());
        }
        match self {
            MarginMode::CosSub => (cos - margin, T::one()),
            MarginMode::ArcPlus | MarginMode::ArcMinus => {
                let c = clamp_unit(cos);
                let theta = c.acos();
                let shifted = if self == MarginMode::ArcPlus { theta + margin } else { theta - margin };
                let sin = (T::one() - c * c).sqrt().max(T::lit(MIN_SIN));
                (shifted.cos(), shifted.sin() / sin)
            }
        }
    }
}

impl fmt::Display for MarginMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MarginMode::ArcPlus => "arc_plus",
            MarginMode::ArcMinus => "arc_minus",
            MarginMode::CosSub => "cos_sub",
        })
    }
}

impl FromStr for MarginMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "arc_plus" => Ok(MarginMode::ArcPlus),
            "arc_minus" => Ok(MarginMode::ArcMinus),
            "cos_sub" => Ok(MarginMode::CosSub),
            _ => Err(Error::InvalidConfig(format!("unknown margin mode `{s}`"))),
        }
    }
}

/// Which loss terms and which identity target a run uses.
///
/// The variants line up with the ablation rows: plain cross-entropy, fixed
/// smoothing, adaptive smoothing (the baseline), baseline plus the viewpoint
/// loss, baseline plus the center regularizer, and the full objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelMode {
    Xent,
    Lsr,
    Alsr,
    #[serde(alias = "alsr_plus_valsr")]
    LyLv,
    LyLr,
    #[default]
    VaReid,
}

impl LabelMode {
    pub const ALL: [LabelMode; 6] = [
        LabelMode::Xent,
        LabelMode::Lsr,
        LabelMode::Alsr,
        LabelMode::LyLv,
        LabelMode::LyLr,
        LabelMode::VaReid,
    ];

    pub fn uses_view_loss(self) -> bool {
        matches!(self, LabelMode::LyLv | LabelMode::VaReid)
    }

    pub fn uses_center_reg(self) -> bool {
        matches!(self, LabelMode::LyLr | LabelMode::VaReid)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            LabelMode::Xent => "xent",
            LabelMode::Lsr => "lsr",
            LabelMode::Alsr => "alsr",
            LabelMode::LyLv => "ly_lv",
            LabelMode::LyLr => "ly_lr",
            LabelMode::VaReid => "va_reid",
        }
    }
}

impl fmt::Display for LabelMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LabelMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "xent" => Ok(LabelMode::Xent),
            "lsr" => Ok(LabelMode::Lsr),
            "alsr" => Ok(LabelMode::Alsr),
            "ly_lv" | "alsr_plus_valsr" => Ok(LabelMode::LyLv),
            "ly_lr" => Ok(LabelMode::LyLr),
            "va_reid" => Ok(LabelMode::VaReid),
            _ => Err(Error::InvalidConfig(format!("unknown label mode `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig<T> {
    /// Logit scale `s`.
    pub scale: T,
    /// Margin `m`, radians for the arc modes.
    pub margin: T,
    pub margin_mode: MarginMode,
    /// Adaptive smoothing strength `α`.
    pub alpha: T,
    /// Center-regularization weight `β`.
    pub beta: T,
    /// Fixed `ε` for the plain smoothing baseline.
    pub lsr_eps: T,
}

impl<T: Scalar> Default for LossConfig<T> {
    fn default() -> Self {
        Self {
            scale: T::lit(30.0),
            margin: T::lit(0.5),
            margin_mode: MarginMode::ArcPlus,
            alpha: T::lit(0.2),
            beta: T::lit(0.1),
            lsr_eps: T::lit(0.1),
        }
    }
}

impl<T: Scalar> LossConfig<T> {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidConfig(format!("loss: {what}")));
        if !(self.scale > T::zero()) {
            return bad("scale must be positive");
        }
        if !(self.margin >= T::zero() && self.margin < T::FRAC_PI_2()) {
            return bad("margin must lie in [0, pi/2)");
        }
        if !(self.alpha >= T::zero() && self.alpha <= T::one()) {
            return bad("alpha must lie in [0, 1]");
        }
        if !(self.beta >= T::zero()) {
            return bad("beta must be non-negative");
        }
        if !(self.lsr_eps >= T::zero() && self.lsr_eps < T::one()) {
            return bad("lsr epsilon must lie in [0, 1)");
        }
        Ok(())
    }
}

/// Identity centers `W` (K×d) and viewpoint centers `U` (K·V×d), row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierParams<T> {
    pub dim: usize,
    pub num_ids: usize,
    pub num_views: usize,
    pub identity: Vec<T>,
    pub view: Vec<T>,
}

impl<T: Scalar> ClassifierParams<T> {
    pub fn new(dim: usize, num_ids: usize, num_views: usize, identity: Vec<T>, view: Vec<T>) -> Result<Self> {
        if identity.len() != dim * num_ids || view.len() != dim * num_ids * num_views {
            return Err(Error::ShapeMismatch(format!(
                "centers for d={dim}, K={num_ids}, V={num_views}: got {} and {} values",
                identity.len(),
                view.len()
            )));
        }
        Ok(Self { dim, num_ids, num_views, identity, view })
    }

    pub fn identity_center(&self, k: usize) -> &[T] {
        &self.identity[k * self.dim..(k + 1) * self.dim]
    }

    pub fn view_center(&self, k: usize, v: usize) -> &[T] {
        let f = k * self.num_views + v;
        &self.view[f * self.dim..(f + 1) * self.dim]
    }

    pub fn num_view_classes(&self) -> usize {
        self.num_ids * self.num_views
    }

    /// Rescales every center to unit length.
    pub fn renormalize(&mut self) -> Result<()> {
        let d = self.dim;
        for c in self.identity.chunks_mut(d).chain(self.view.chunks_mut(d)) {
            normalize_in_place(c)?;
        }
        Ok(())
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            identity: vec![T::zero(); self.identity.len()],
            view: vec![T::zero(); self.view.len()],
            ..*self
        }
    }

    /// Mean cosine between each viewpoint center and its identity center.
    pub fn mean_center_cosine(&self) -> T {
        let mut acc = T::zero();
        for k in 0..self.num_ids {
            let w = self.identity_center(k);
            for v in 0..self.num_views {
                let u = self.view_center(k, v);
                acc = acc + clamp_unit(dot(w, u) / (norm(w) * norm(u)));
            }
        }
        acc / T::from_usize_lossy(self.num_view_classes())
    }
}

/// Loss value, its components, and gradients for one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput<T> {
    pub value: T,
    pub identity_loss: T,
    pub view_loss: T,
    pub center_loss: T,
    pub grad_x: Vec<T>,
    pub grad_identity: Vec<T>,
    pub grad_view: Vec<T>,
}

/// Soft or hard targets for one sample, fixed before differentiation.
#[derive(Debug, Clone, PartialEq)]
pub struct Targets<T> {
    pub identity: LabelDistribution<T>,
    pub view: Option<LabelDistribution<T>>,
}

struct Head<T> {
    cos: Vec<T>,
    norms: Vec<T>,
    log_probs: Vec<T>,
    target_slope: T,
}

/// Forward pass of one angular head. `centers` is `n×d` row-major.
fn head_forward<T: Scalar>(x: &[T], centers: &[T], target: usize, cfg: &LossConfig<T>) -> Head<T> {
    let d = x.len();
    let mut cos = Vec::with_capacity(centers.len() / d);
    let mut norms = Vec::with_capacity(centers.len() / d);
    for c in centers.chunks(d) {
        let n = norm(c);
        norms.push(n);
        cos.push(dot(c, x) / n);
    }
    let (adjusted, target_slope) = cfg.margin_mode.apply(cos[target], cfg.margin);
    let mut logits: Vec<T> = cos.iter().map(|&c| cfg.scale * c).collect();
    logits[target] = cfg.scale * adjusted;
    Head { cos, norms, log_probs: log_softmax(&logits), target_slope }
}

/// Log-softmax with the log-sum-exp taken as `max + ln_1p(rest)`, which keeps
/// the log-probability of a dominant class accurate near zero.
fn log_softmax<T: Scalar>(logits: &[T]) -> Vec<T> {
    let (top, max) = logits
        .iter()
        .copied()
        .enumerate()
        .fold((0, T::neg_infinity()), |best, (i, l)| if l > best.1 { (i, l) } else { best });
    let rest = logits
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != top)
        .fold(T::zero(), |acc, (_, &l)| acc + (l - max).exp());
    let log_norm = rest.ln_1p();
    logits.iter().map(|&l| (l - max) - log_norm).collect()
}

impl<T: Scalar> Head<T> {
    fn probs(&self) -> LabelDistribution<T> {
        LabelDistribution::from_softmax(self.log_probs.iter().map(|l| l.exp()).collect())
    }

    fn cross_entropy(&self, target: &LabelDistribution<T>) -> T {
        target
            .probs()
            .iter()
            .zip(&self.log_probs)
            .filter(|(t, _)| **t > T::zero())
            .fold(T::zero(), |acc, (&t, &lp)| acc - t * lp)
    }

    /// Accumulates `∂CE/∂x` and `∂CE/∂centers`.
    #[allow(clippy::too_many_arguments)]
    fn backward(
        &self,
        x: &[T],
        centers: &[T],
        label: usize,
        target: &LabelDistribution<T>,
        cfg: &LossConfig<T>,
        grad_x: &mut [T],
        grad_centers: &mut [T],
    ) {
        let d = x.len();
        // Exact derivative is p·Σt - t; the stored target sums to one only up to
        // rounding, which matters once the softmax saturates.
        let mass: T = target.probs().iter().copied().sum();
        for (j, ((c, gc), &lp)) in centers.chunks(d).zip(grad_centers.chunks_mut(d)).zip(&self.log_probs).enumerate() {
            let dlogit = if lp > -T::LN_2() {
                let rest = target.probs().iter().enumerate().filter(|&(i, _)| i != j).fold(T::zero(), |a, (_, &t)| a + t);
                lp.exp_m1() * mass + rest
            } else {
                lp.exp() * mass - target[j]
            };
            let mut dcos = cfg.scale * dlogit;
            if j == label {
                dcos = dcos * self.target_slope;
            }
            if dcos == T::zero() {
                continue;
            }
            let inv = T::one() / self.norms[j];
            // d cos / d x = c / |c|;  d cos / d c = (x - cos · c/|c|) / |c|
            axpy(dcos * inv, c, grad_x);
            axpy(dcos * inv, x, gc);
            axpy(-dcos * self.cos[j] * inv * inv, c, gc);
        }
    }
}

fn check_dims<T: Scalar>(x: &[T], params: &ClassifierParams<T>) -> Result<()> {
    if x.len() != params.dim {
        return Err(Error::LengthMismatch { expected: params.dim, got: x.len() });
    }
    Ok(())
}

/// Margin-adjusted softmax over the `K` identity centers.
pub fn identity_probs<T: Scalar>(
    x: &[T],
    params: &ClassifierParams<T>,
    cfg: &LossConfig<T>,
    y: usize,
) -> Result<LabelDistribution<T>> {
    check_unit(x)?;
    check_dims(x, params)?;
    ViewAwareIndex::new(y, 0, params.num_ids, 1)?;
    Ok(head_forward(x, &params.identity, y, cfg).probs())
}

/// Margin-adjusted softmax over all `K·V` viewpoint centers.
pub fn viewpoint_probs<T: Scalar>(
    x: &[T],
    params: &ClassifierParams<T>,
    cfg: &LossConfig<T>,
    y: usize,
    v: usize,
) -> Result<LabelDistribution<T>> {
    check_unit(x)?;
    check_dims(x, params)?;
    let idx = ViewAwareIndex::new(y, v, params.num_ids, params.num_views)?;
    Ok(head_forward(x, &params.view, idx.flat(params.num_views), cfg).probs())
}

/// `-Σ target[j] · ln probs[j]`; zero-weight classes are skipped.
pub fn cross_entropy<T: Scalar>(target: &LabelDistribution<T>, probs: &LabelDistribution<T>) -> Result<T> {
    if target.len() != probs.len() {
        return Err(Error::LengthMismatch { expected: target.len(), got: probs.len() });
    }
    Ok(target
        .probs()
        .iter()
        .zip(probs.probs())
        .filter(|(t, _)| **t > T::zero())
        .fold(T::zero(), |acc, (&t, &p)| acc - t * p.ln()))
}

/// Center regularizer value with its gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct CenterReg<T> {
    pub value: T,
    pub grad_identity: Vec<T>,
    pub grad_view: Vec<T>,
}

/// Mean of `1 - cos(W_k, U_{k,v})` over all identity/viewpoint pairs.
pub fn center_regularization<T: Scalar>(params: &ClassifierParams<T>) -> CenterReg<T> {
    let d = params.dim;
    let pairs = T::from_usize_lossy(params.num_view_classes());
    let mut value = T::zero();
    let mut grad_identity = vec![T::zero(); params.identity.len()];
    let mut grad_view = vec![T::zero(); params.view.len()];
    for k in 0..params.num_ids {
        let w = params.identity_center(k);
        let nw = norm(w);
        for v in 0..params.num_views {
            let u = params.view_center(k, v);
            let nu = norm(u);
            let c = dot(w, u) / (nw * nu);
            value = value + (T::one() - c);
            let f = k * params.num_views + v;
            let gw = &mut grad_identity[k * d..(k + 1) * d];
            // d(1 - c)/dw = -(u/|u| - c w/|w|) / |w|
            axpy(-T::one() / (pairs * nw * nu), u, gw);
            axpy(c / (pairs * nw * nw), w, gw);
            let gu = &mut grad_view[f * d..(f + 1) * d];
            axpy(-T::one() / (pairs * nw * nu), w, gu);
            axpy(c / (pairs * nu * nu), u, gu);
        }
    }
    CenterReg { value: (value / pairs).max(T::zero()), grad_identity, grad_view }
}

/// Builds the targets for `mode` from the current predictions on `x`.
pub fn build_targets<T: Scalar>(
    x: &[T],
    y: usize,
    v: usize,
    params: &ClassifierParams<T>,
    cfg: &LossConfig<T>,
    mode: LabelMode,
) -> Result<Targets<T>> {
    check_dims(x, params)?;
    let (k, nv) = (params.num_ids, params.num_views);
    let idx = ViewAwareIndex::new(y, v, k, nv)?;
    let identity = match mode {
        LabelMode::Xent => labels::hard_identity(y, k)?,
        LabelMode::Lsr => labels::lsr(y, k, cfg.lsr_eps)?,
        _ => {
            let q = head_forward(x, &params.identity, y, cfg).probs();
            labels::alsr(y, k, cfg.alpha, &q)?
        }
    };
    let view = if mode.uses_view_loss() {
        let flat = idx.flat(nv);
        let r = head_forward(x, &params.view, flat, cfg).probs();
        Some(labels::valsr(y, v, k, nv, cfg.alpha, &r)?)
    } else {
        None
    };
    Ok(Targets { identity, view })
}

/// One cross-entropy term with gradients in `x` and its centers.
#[derive(Debug, Clone, PartialEq)]
pub struct TermOutput<T> {
    pub value: T,
    pub grad_x: Vec<T>,
    pub grad_centers: Vec<T>,
}

fn term<T: Scalar>(
    x: &[T],
    centers: &[T],
    label: usize,
    cfg: &LossConfig<T>,
    target: &LabelDistribution<T>,
) -> Result<TermOutput<T>> {
    let n = centers.len() / x.len();
    if target.len() != n {
        return Err(Error::LengthMismatch { expected: n, got: target.len() });
    }
    let head = head_forward(x, centers, label, cfg);
    let mut grad_x = vec![T::zero(); x.len()];
    let mut grad_centers = vec![T::zero(); centers.len()];
    head.backward(x, centers, label, target, cfg, &mut grad_x, &mut grad_centers);
    Ok(TermOutput { value: head.cross_entropy(target), grad_x, grad_centers })
}

/// Identity loss `L_y` against a fixed target over `K` classes.
pub fn identity_term<T: Scalar>(
    x: &[T],
    y: usize,
    params: &ClassifierParams<T>,
    cfg: &LossConfig<T>,
    target: &LabelDistribution<T>,
) -> Result<TermOutput<T>> {
    check_dims(x, params)?;
    ViewAwareIndex::new(y, 0, params.num_ids, 1)?;
    term(x, &params.identity, y, cfg, target)
}

/// Viewpoint-aware loss `L_v` against a fixed target over `K·V` classes.
pub fn view_term<T: Scalar>(
    x: &[T],
    y: usize,
    v: usize,
    params: &ClassifierParams<T>,
    cfg: &LossConfig<T>,
    target: &LabelDistribution<T>,
) -> Result<TermOutput<T>> {
    check_dims(x, params)?;
    let idx = ViewAwareIndex::new(y, v, params.num_ids, params.num_views)?;
    term(x, &params.view, idx.flat(params.num_views), cfg, target)
}

/// Loss and gradients for fixed targets.
///
/// `x` is used as given (no unit-norm check), so finite-difference probes
/// may step off the sphere. The center term is added when
/// `with_center_reg` is set and the mode uses it.
#[allow(clippy::too_many_arguments)]
pub fn loss_with_targets<T: Scalar>(
    x: &[T],
    y: usize,
    v: usize,
    params: &ClassifierParams<T>,
    cfg: &LossConfig<T>,
    mode: LabelMode,
    targets: &Targets<T>,
    with_center_reg: bool,
) -> Result<LossOutput<T>> {
    let id = identity_term(x, y, params, cfg, &targets.identity)?;
    let mut grad_x = id.grad_x;
    let grad_identity = id.grad_centers;
    let mut grad_view = vec![T::zero(); params.view.len()];

    let mut view_loss = T::zero();
    if mode.uses_view_loss() {
        let target = targets
            .view
            .as_ref()
            .ok_or_else(|| Error::InvalidDistribution("viewpoint target missing".into()))?;
        let vt = view_term(x, y, v, params, cfg, target)?;
        view_loss = vt.value;
        axpy(T::one(), &vt.grad_x, &mut grad_x);
        grad_view = vt.grad_centers;
    }

    let mut grad_identity = grad_identity;
    let mut center_loss = T::zero();
    if with_center_reg && mode.uses_center_reg() {
        let reg = center_regularization(params);
        center_loss = reg.value;
        axpy(cfg.beta, &reg.grad_identity, &mut grad_identity);
        axpy(cfg.beta, &reg.grad_view, &mut grad_view);
    }

    Ok(LossOutput {
        value: id.value + view_loss + cfg.beta * center_loss,
        identity_loss: id.value,
        view_loss,
        center_loss,
        grad_x,
        grad_identity,
        grad_view,
    })
}

/// Combined objective `L_y + L_v + β·L_R` for one unit-norm embedding, with
/// terms switched on or off by `mode`.
pub fn va_loss<T: Scalar>(
    x: &[T],
    y: usize,
    v: usize,
    params: &ClassifierParams<T>,
    cfg: &LossConfig<T>,
    mode: LabelMode,
) -> Result<LossOutput<T>> {
    check_unit(x)?;
    let targets = build_targets(x, y, v, params, cfg, mode)?;
    loss_with_targets(x, y, v, params, cfg, mode, &targets, true)
}
