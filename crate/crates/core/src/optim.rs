//! Adam with bias correction and an epoch-level warmup/step-decay schedule.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Linear warmup from `warmup_start_lr`, then `base_lr · decay^n` where `n`
/// counts the milestones already reached.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule<T> {
    pub base_lr: T,
    pub warmup_start_lr: T,
    pub warmup_epochs: usize,
    pub milestones: Vec<usize>,
    pub decay: T,
}

impl<T: Scalar> Default for LrSchedule<T> {
    fn default() -> Self {
        Self {
            base_lr: T::lit(3.5e-4),
            warmup_start_lr: T::lit(3.5e-5),
            warmup_epochs: 10,
            milestones: vec![50, 100, 160],
            decay: T::lit(0.1),
        }
    }
}

impl<T: Scalar> LrSchedule<T> {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(format!("schedule: {m}")));
        if !(self.base_lr > T::zero() && self.warmup_start_lr > T::zero()) {
            return bad("learning rates must be positive".into());
        }
        if self.warmup_start_lr > self.base_lr {
            return bad("warmup start exceeds base rate".into());
        }
        if !(self.decay > T::zero() && self.decay <= T::one()) {
            return bad("decay must lie in (0, 1]".into());
        }
        if self.milestones.windows(2).any(|w| w[0] >= w[1]) {
            return bad(format!("milestones {:?} not strictly increasing", self.milestones));
        }
        if self.milestones.first().is_some_and(|&m| m <= self.warmup_epochs) {
            return bad("first milestone must come after warmup".into());
        }
        Ok(())
    }

    pub fn lr_at(&self, epoch: usize) -> T {
        if epoch < self.warmup_epochs {
            let frac = T::from_usize_lossy(epoch) / T::from_usize_lossy(self.warmup_epochs);
            return self.warmup_start_lr + (self.base_lr - self.warmup_start_lr) * frac;
        }
        let passed = self.milestones.iter().filter(|&&m| m <= epoch).count();
        self.base_lr * self.decay.powi(passed as i32)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig<T> {
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
    pub weight_decay: T,
    /// Apply decay directly to the weights (AdamW) instead of adding
    /// `weight_decay · param` to the gradient.
    pub decoupled: bool,
}

impl<T: Scalar> Default for AdamConfig<T> {
    fn default() -> Self {
        Self {
            beta1: T::lit(0.9),
            beta2: T::lit(0.999),
            eps: T::lit(1e-8),
            weight_decay: T::lit(5e-4),
            decoupled: false,
        }
    }
}

/// Moment estimates for a fixed list of parameter tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub config: AdamConfig<T>,
    pub step: u64,
    first: Vec<Vec<T>>,
    second: Vec<Vec<T>>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(config: AdamConfig<T>, shapes: &[usize]) -> Self {
        Self {
            config,
            step: 0,
            first: shapes.iter().map(|&n| vec![T::zero(); n]).collect(),
            second: shapes.iter().map(|&n| vec![T::zero(); n]).collect(),
        }
    }

    /// One bias-corrected Adam update over every tensor.
    pub fn step(&mut self, params: &mut [&mut [T]], grads: &[&[T]], lr: T) -> Result<()> {
        if params.len() != self.first.len() || grads.len() != params.len() {
            return Err(Error::ShapeMismatch(format!(
                "optimizer tracks {} tensors, got {} params and {} grads",
                self.first.len(),
                params.len(),
                grads.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.len() != self.first[i].len() || g.len() != p.len() {
                return Err(Error::ShapeMismatch(format!(
                    "tensor {i}: state {}, param {}, grad {}",
                    self.first[i].len(),
                    p.len(),
                    g.len()
                )));
            }
        }
        let AdamConfig { beta1, beta2, eps, weight_decay, decoupled } = self.config;
        self.step += 1;
        let t = self.step as i32;
        let c1 = T::one() - beta1.powi(t);
        let c2 = T::one() - beta2.powi(t);
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.first).zip(&mut self.second) {
            for i in 0..p.len() {
                let mut gi = g[i];
                if !decoupled {
                    gi = gi + weight_decay * p[i];
                }
                m[i] = beta1 * m[i] + (T::one() - beta1) * gi;
                v[i] = beta2 * v[i] + (T::one() - beta2) * gi * gi;
                let update = (m[i] / c1) / ((v[i] / c2).sqrt() + eps);
                if decoupled {
                    p[i] = p[i] - lr * weight_decay * p[i];
                }
                p[i] = p[i] - lr * update;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_examples() {
        let s = LrSchedule::<f64>::default();
        s.validate().unwrap();
        assert_eq!(s.lr_at(0), 3.5e-5);
        assert!((s.lr_at(5) - 1.925e-4).abs() < 1e-18);
        assert!((s.lr_at(10) - 3.5e-4).abs() < 1e-18);
        assert!((s.lr_at(120) - 3.5e-6).abs() < 1e-18);
        assert!((s.lr_at(49) - 3.5e-4).abs() < 1e-18);
        assert!((s.lr_at(50) - 3.5e-5).abs() < 1e-18);
        assert!((s.lr_at(199) - 3.5e-7).abs() < 1e-19);
    }

    #[test]
    fn schedule_is_piecewise_monotone() {
        let s = LrSchedule::<f64>::default();
        for e in 1..s.warmup_epochs {
            assert!(s.lr_at(e) >= s.lr_at(e - 1));
        }
        for e in s.warmup_epochs + 1..220 {
            assert!(s.lr_at(e) <= s.lr_at(e - 1));
        }
    }

    #[test]
    fn schedule_validation() {
        let mut s = LrSchedule::<f64>::default();
        s.milestones = vec![50, 40];
        assert!(s.validate().is_err());
        s.milestones = vec![5];
        assert!(s.validate().is_err());
        let s = LrSchedule { warmup_start_lr: 1.0, ..LrSchedule::<f64>::default() };
        assert!(s.validate().is_err());
    }

    fn no_decay() -> AdamConfig<f64> {
        AdamConfig { weight_decay: 0.0, ..AdamConfig::default() }
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut st = AdamState::new(no_decay(), &[3]);
        let mut p = vec![1.0, -2.0, 0.5];
        for _ in 0..5 {
            st.step(&mut [&mut p], &[&[0.0, 0.0, 0.0]], 0.1).unwrap();
        }
        assert_eq!(p, vec![1.0, -2.0, 0.5]);
    }

    #[test]
    fn single_step_moves_by_lr() {
        // m̂ = 1, v̂ = 1 after bias correction: Δ = -0.1 / (1 + 1e-8)
        let mut st = AdamState::new(no_decay(), &[1]);
        let mut p = vec![1.0];
        st.step(&mut [&mut p], &[&[1.0]], 0.1).unwrap();
        assert!((p[0] - (1.0 - 0.1 / (1.0 + 1e-8))).abs() < 1e-15);
        assert_eq!(st.step, 1);
    }

    #[test]
    fn identical_params_stay_identical() {
        let mut st = AdamState::new(AdamConfig::default(), &[2, 2]);
        let mut a = vec![0.3, 0.3];
        let mut b = vec![0.3, 0.3];
        for k in 0..50 {
            let g = [(k as f64).sin(), (k as f64).sin()];
            st.step(&mut [&mut a, &mut b], &[&g, &g], 0.01).unwrap();
        }
        assert_eq!(a[0], a[1]);
        assert_eq!(a, b);
    }

    #[test]
    fn weight_decay_modes() {
        let mut coupled = AdamState::new(AdamConfig { weight_decay: 0.1, ..AdamConfig::default() }, &[1]);
        let mut p: Vec<f64> = vec![2.0];
        coupled.step(&mut [&mut p], &[&[0.0]], 0.01).unwrap();
        // gradient 0.2 after decay term; first step moves by ~lr
        assert!((p[0] - (2.0 - 0.01 / (1.0 + 1e-8 / 0.2))).abs() < 1e-12);

        let cfg = AdamConfig { weight_decay: 0.1, decoupled: true, ..AdamConfig::default() };
        let mut decoupled = AdamState::new(cfg, &[1]);
        let mut p: Vec<f64> = vec![2.0];
        decoupled.step(&mut [&mut p], &[&[0.0]], 0.01).unwrap();
        assert!((p[0] - 2.0 * (1.0 - 0.001)).abs() < 1e-15);
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let mut st = AdamState::new(AdamConfig::<f64>::default(), &[2]);
        let mut p = vec![0.0; 3];
        assert!(matches!(st.step(&mut [&mut p], &[&[0.0; 3]], 0.1), Err(Error::ShapeMismatch(_))));
        let mut p = vec![0.0; 2];
        assert!(matches!(st.step(&mut [&mut p], &[&[0.0; 1]], 0.1), Err(Error::ShapeMismatch(_))));
    }
}
