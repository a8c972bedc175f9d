//! Target label distributions: one-hot, fixed smoothing, adaptive smoothing
//! and the three-tier viewpoint-aware adaptive smoothing over `K·V` classes.
//!
//! Every constructor returns a [`LabelDistribution`] that is non-negative and
//! sums to one. Adaptive targets are plain values: nothing differentiates
//! through the probabilities they were built from.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Sum-to-one tolerance for a valid distribution.
pub const SUM_TOL: f64 = 1e-9;

/// Largest `α` accepted by [`valsr`]. Above it the target entry
/// `1 - ε₁ - ε₂` can go negative.
pub const VALSR_MAX_ALPHA: f64 = 0.5;

/// A probability vector over `K` identities or `K·V` identity/viewpoint pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LabelDistribution<T> {
    probs: Vec<T>,
}

impl<T: Scalar> LabelDistribution<T> {
    /// Validates non-negativity and normalization.
    pub fn new(probs: Vec<T>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::InvalidDistribution("empty".into()));
        }
        if let Some((i, p)) = probs.iter().enumerate().find(|(_, p)| !p.is_finite() || **p < T::zero()) {
            return Err(Error::InvalidDistribution(format!("entry {i} is {p}")));
        }
        let sum: T = probs.iter().copied().sum();
        if (sum.to_f64_lossy() - 1.0).abs() > SUM_TOL {
            return Err(Error::InvalidDistribution(format!("entries sum to {sum}")));
        }
        Ok(Self { probs })
    }

    /// Wraps a vector the caller guarantees to be a distribution (softmax output).
    pub(crate) fn from_softmax(probs: Vec<T>) -> Self {
        Self { probs }
    }

    pub fn probs(&self) -> &[T] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn into_vec(self) -> Vec<T> {
        self.probs
    }

    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, p) in self.probs.iter().enumerate() {
            if *p > self.probs[best] {
                best = i;
            }
        }
        best
    }
}

impl<T> std::ops::Index<usize> for LabelDistribution<T> {
    type Output = T;
    fn index(&self, i: usize) -> &T {
        &self.probs[i]
    }
}

/// An (identity, viewpoint) pair, flattened as `identity·V + viewpoint`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ViewAwareIndex {
    pub identity: usize,
    pub viewpoint: usize,
}

impl ViewAwareIndex {
    pub fn new(identity: usize, viewpoint: usize, num_ids: usize, num_views: usize) -> Result<Self> {
        check_index("identity", identity, num_ids)?;
        check_index("viewpoint", viewpoint, num_views)?;
        Ok(Self { identity, viewpoint })
    }

    pub fn flat(&self, num_views: usize) -> usize {
        self.identity * num_views + self.viewpoint
    }

    pub fn from_flat(flat: usize, num_views: usize) -> Self {
        Self { identity: flat / num_views, viewpoint: flat % num_views }
    }
}

fn check_index(what: &'static str, index: usize, len: usize) -> Result<()> {
    if index >= len {
        return Err(Error::IndexOutOfRange { what, index, len });
    }
    Ok(())
}

fn check_unit_interval<T: Scalar>(x: T, upper_inclusive: bool) -> Result<()> {
    let ok = x >= T::zero() && if upper_inclusive { x <= T::one() } else { x < T::one() };
    if !ok {
        return Err(Error::InvalidSmoothing(x.to_f64_lossy()));
    }
    Ok(())
}

fn check_len<T>(dist: &LabelDistribution<T>, expected: usize) -> Result<()> {
    if dist.probs.len() != expected {
        return Err(Error::InvalidDistribution(format!(
            "expected {expected} classes, got {}",
            dist.probs.len()
        )));
    }
    Ok(())
}

/// Re-validates a distribution received from outside (e.g. deserialized).
fn revalidate<T: Scalar>(dist: &LabelDistribution<T>) -> Result<()> {
    LabelDistribution::new(dist.probs.clone()).map(|_| ())
}

pub fn hard_identity<T: Scalar>(y: usize, num_ids: usize) -> Result<LabelDistribution<T>> {
    check_index("identity", y, num_ids)?;
    let mut probs = vec![T::zero(); num_ids];
    probs[y] = T::one();
    Ok(LabelDistribution { probs })
}

/// Fixed-`ε` smoothing: `1-ε` on the target, `ε/(K-1)` elsewhere.
pub fn lsr<T: Scalar>(y: usize, num_ids: usize, eps: T) -> Result<LabelDistribution<T>> {
    check_index("identity", y, num_ids)?;
    check_unit_interval(eps, false)?;
    if num_ids < 2 {
        return Err(Error::InvalidConfig("smoothing needs at least two classes".into()));
    }
    Ok(smoothed(y, num_ids, eps))
}

fn smoothed<T: Scalar>(y: usize, num_ids: usize, eps: T) -> LabelDistribution<T> {
    let off = eps / T::from_usize_lossy(num_ids - 1);
    let mut probs = vec![off; num_ids];
    probs[y] = T::one() - eps;
    LabelDistribution { probs }
}

/// Adaptive smoothing with `ε = α·(1 - q[y])`, where `q` is the current
/// prediction. One `ε` serves both branches so the result stays normalized.
pub fn alsr<T: Scalar>(
    y: usize,
    num_ids: usize,
    alpha: T,
    q: &LabelDistribution<T>,
) -> Result<LabelDistribution<T>> {
    check_index("identity", y, num_ids)?;
    check_unit_interval(alpha, true)?;
    if num_ids < 2 {
        return Err(Error::InvalidConfig("smoothing needs at least two classes".into()));
    }
    check_len(q, num_ids)?;
    revalidate(q)?;
    let eps = alpha * (T::one() - q.probs[y]).max(T::zero());
    Ok(smoothed(y, num_ids, eps))
}

pub fn hard_view<T: Scalar>(
    y: usize,
    v: usize,
    num_ids: usize,
    num_views: usize,
) -> Result<LabelDistribution<T>> {
    let idx = ViewAwareIndex::new(y, v, num_ids, num_views)?;
    let mut probs = vec![T::zero(); num_ids * num_views];
    probs[idx.flat(num_views)] = T::one();
    Ok(LabelDistribution { probs })
}

/// Three-tier adaptive target over `K·V` identity/viewpoint classes.
///
/// With `ε₁ = α(1 - Σ_o r[y,o])` and `ε₂ = α(1 - r[y,v])`:
/// the target pair gets `1 - ε₁ - ε₂`, the other `V-1` viewpoints of the same
/// identity share `ε₂`, and the remaining `K·V - V` classes share `ε₁`.
pub fn valsr<T: Scalar>(
    y: usize,
    v: usize,
    num_ids: usize,
    num_views: usize,
    alpha: T,
    r: &LabelDistribution<T>,
) -> Result<LabelDistribution<T>> {
    let idx = ViewAwareIndex::new(y, v, num_ids, num_views)?;
    if alpha < T::zero() || alpha > T::lit(VALSR_MAX_ALPHA) || alpha.is_nan() {
        return Err(Error::InvalidSmoothing(alpha.to_f64_lossy()));
    }
    if num_ids < 2 || num_views < 2 {
        return Err(Error::InvalidConfig("viewpoint smoothing needs K >= 2 and V >= 2".into()));
    }
    let total = num_ids * num_views;
    check_len(r, total)?;
    revalidate(r)?;

    let base = y * num_views;
    let own: T = r.probs[base..base + num_views].iter().copied().sum();
    let eps1 = alpha * (T::one() - own).max(T::zero());
    let eps2 = alpha * (T::one() - r.probs[idx.flat(num_views)]).max(T::zero());

    let mut probs = vec![eps1 / T::from_usize_lossy(total - num_views); total];
    let sibling = eps2 / T::from_usize_lossy(num_views - 1);
    for p in &mut probs[base..base + num_views] {
        *p = sibling;
    }
    probs[idx.flat(num_views)] = T::one() - eps1 - eps2;
    Ok(LabelDistribution { probs })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn hard_identity_examples() {
        assert_eq!(hard_identity::<f64>(2, 4).unwrap().probs(), &[0.0, 0.0, 1.0, 0.0]);
        assert_eq!(hard_identity::<f64>(0, 1).unwrap().probs(), &[1.0]);
        assert!(matches!(hard_identity::<f64>(5, 4), Err(Error::IndexOutOfRange { .. })));
    }

    #[test]
    fn lsr_examples() {
        let d = lsr(1, 4, 0.1).unwrap();
        let third = 0.1 / 3.0;
        assert!(close(d.probs(), &[third, 0.9, third, third], 1e-15));
        assert_eq!(lsr(2, 5, 0.0).unwrap(), hard_identity(2, 5).unwrap());
        assert_eq!(lsr(0, 2, 0.5).unwrap().probs(), &[0.5, 0.5]);
        assert!(matches!(lsr(0, 3, 1.0), Err(Error::InvalidSmoothing(_))));
        assert!(matches!(lsr(0, 3, -0.1), Err(Error::InvalidSmoothing(_))));
        assert!(matches!(lsr(3, 3, 0.1), Err(Error::IndexOutOfRange { .. })));
    }

    #[test]
    fn alsr_examples() {
        let q = LabelDistribution::new(vec![0.9, 0.05, 0.05]).unwrap();
        let d = alsr(0, 3, 0.2, &q).unwrap();
        assert!(close(d.probs(), &[0.98, 0.01, 0.01], 1e-15));

        let q = LabelDistribution::new(vec![0.2, 0.3, 0.5]).unwrap();
        assert_eq!(alsr(1, 3, 0.0, &q).unwrap(), hard_identity(1, 3).unwrap());

        // eps = 0.2 * (1 - 1/3) = 2/15; target 13/15, others 1/15.
        let q = LabelDistribution::new(vec![1.0 / 3.0; 3]).unwrap();
        let d = alsr(0, 3, 0.2, &q).unwrap();
        assert!(close(d.probs(), &[13.0 / 15.0, 1.0 / 15.0, 1.0 / 15.0], 1e-15));
    }

    #[test]
    fn alsr_rejects_bad_inputs() {
        let q = LabelDistribution::new(vec![0.5, 0.5]).unwrap();
        assert!(matches!(alsr(0, 2, 1.5, &q), Err(Error::InvalidSmoothing(_))));
        assert!(matches!(alsr(2, 2, 0.2, &q), Err(Error::IndexOutOfRange { .. })));
        assert!(matches!(alsr(0, 3, 0.2, &q), Err(Error::InvalidDistribution(_))));
        let bad = LabelDistribution { probs: vec![0.7, 0.7] };
        assert!(matches!(alsr(0, 2, 0.2, &bad), Err(Error::InvalidDistribution(_))));
        assert!(LabelDistribution::new(vec![1.2, -0.2]).is_err());
    }

    #[test]
    fn hard_view_examples() {
        let d = hard_view::<f64>(0, 1, 2, 3).unwrap();
        assert_eq!(d.argmax(), 1);
        assert_eq!(d.probs().iter().sum::<f64>(), 1.0);
        assert_eq!(hard_view::<f64>(1, 2, 2, 3).unwrap().argmax(), 5);
        assert!(matches!(hard_view::<f64>(0, 3, 2, 3), Err(Error::IndexOutOfRange { .. })));
    }

    #[test]
    fn view_index_is_bijective() {
        let (k, v) = (4, 3);
        let mut seen = vec![false; k * v];
        for y in 0..k {
            for o in 0..v {
                let idx = ViewAwareIndex::new(y, o, k, v).unwrap();
                let f = idx.flat(v);
                assert!(!seen[f]);
                seen[f] = true;
                assert_eq!(ViewAwareIndex::from_flat(f, v), idx);
            }
        }
        assert!(seen.into_iter().all(|s| s));
    }

    #[test]
    fn valsr_worked_example() {
        let o = 0.1 / 3.0;
        let r = LabelDistribution::new(vec![0.7, 0.1, 0.1, o, o, o]).unwrap();
        let d = valsr(0, 0, 2, 3, 0.2, &r).unwrap();
        let e = 0.02 / 3.0;
        assert!(close(d.probs(), &[0.92, 0.03, 0.03, e, e, e], 1e-12));
        assert!((d.probs().iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn valsr_uniform_example() {
        // eps1 = 0.2 * 2/3 = 2/15, eps2 = 0.2 * 8/9 = 8/45
        // target = 1 - 2/15 - 8/45 = 31/45; siblings 4/45; others (2/15)/6 = 1/45
        let r = LabelDistribution::new(vec![1.0 / 9.0; 9]).unwrap();
        let d = valsr(1, 2, 3, 3, 0.2, &r).unwrap();
        let f = 1.0 / 45.0;
        let expect = [f, f, f, 4.0 * f, 4.0 * f, 31.0 * f, f, f, f];
        assert!(close(d.probs(), &expect, 1e-15));
    }

    #[test]
    fn valsr_zero_alpha_is_hard() {
        let r = LabelDistribution::new(vec![1.0 / 6.0; 6]).unwrap();
        assert_eq!(valsr(1, 2, 2, 3, 0.0, &r).unwrap(), hard_view(1, 2, 2, 3).unwrap());
        assert!(matches!(valsr(0, 0, 2, 3, 0.6, &r), Err(Error::InvalidSmoothing(_))));
        assert!(matches!(valsr(0, 3, 2, 3, 0.2, &r), Err(Error::IndexOutOfRange { .. })));
    }

    fn dist(n: usize) -> impl Strategy<Value = LabelDistribution<f64>> {
        prop::collection::vec(0.0f64..1.0, n).prop_filter_map("nonzero", |w| {
            let s: f64 = w.iter().sum();
            (s > 1e-6).then(|| LabelDistribution::from_softmax(w.iter().map(|x| x / s).collect()))
        })
    }

    proptest! {
        #[test]
        fn alsr_is_monotone_in_confidence(q in dist(5), y in 0usize..5, bump in 0.0f64..1.0, a in 0.0f64..=1.0) {
            // raise q[y] toward 1 and rescale the others
            let qy = q[y] + (1.0 - q[y]) * bump;
            let rest = 1.0 - q[y];
            let raised: Vec<f64> = (0..5).map(|j| if j == y { qy } else if rest > 0.0 { q[j] * (1.0 - qy) / rest } else { 0.0 }).collect();
            let raised = LabelDistribution::new(raised).unwrap();
            let lo = alsr(y, 5, a, &q).unwrap();
            let hi = alsr(y, 5, a, &raised).unwrap();
            prop_assert!(hi[y] >= lo[y] - 1e-15);
        }

        #[test]
        fn valsr_target_bounded_below(r in dist(12), y in 0usize..4, v in 0usize..3, a in 0.0f64..=0.5) {
            let d = valsr(y, v, 4, 3, a, &r).unwrap();
            prop_assert!(d[y * 3 + v] >= 1.0 - 2.0 * a - 1e-15);
        }
    }
}
