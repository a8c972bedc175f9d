//! Training configuration, read from TOML with `[loss]`, `[optim]`,
//! `[train]` and `[model]` sections. Missing keys take the defaults below.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::loss::{LabelMode, LossConfig, MarginMode};
use crate::optim::{AdamConfig, LrSchedule};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossSection {
    pub s: f64,
    pub m: f64,
    pub margin_mode: MarginMode,
    pub alpha: f64,
    pub beta: f64,
    pub label_mode: LabelMode,
    pub lsr_eps: f64,
}

impl Default for LossSection {
    fn default() -> Self {
        let d = LossConfig::<f64>::default();
        Self {
            s: d.scale,
            m: d.margin,
            margin_mode: d.margin_mode,
            alpha: d.alpha,
            beta: d.beta,
            label_mode: LabelMode::VaReid,
            lsr_eps: d.lsr_eps,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimSection {
    pub lr: f64,
    pub warmup_lr: f64,
    pub warmup_epochs: usize,
    pub milestones: Vec<usize>,
    pub decay: f64,
    pub weight_decay: f64,
    pub decoupled_weight_decay: bool,
}

impl Default for OptimSection {
    fn default() -> Self {
        let s = LrSchedule::<f64>::default();
        Self {
            lr: s.base_lr,
            warmup_lr: s.warmup_start_lr,
            warmup_epochs: s.warmup_epochs,
            milestones: s.milestones,
            decay: s.decay,
            weight_decay: 5e-4,
            decoupled_weight_decay: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: usize,
    /// Identities per batch.
    pub p: usize,
    /// Samples per identity.
    pub q: usize,
    pub seed: u64,
    /// Longest CMC rank reported.
    pub max_rank: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self { epochs: 200, p: 16, q: 4, seed: 0, max_rank: 20 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub raw_dim: usize,
    pub hidden: usize,
    pub embed_dim: usize,
    /// Start each viewpoint center as a perturbation of its identity center.
    pub view_init_near_identity: bool,
    /// Per-coordinate noise of that perturbation.
    pub view_init_noise: f64,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self { raw_dim: 32, hidden: 64, embed_dim: 16, view_init_near_identity: true, view_init_noise: 0.1 }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub loss: LossSection,
    pub optim: OptimSection,
    pub train: TrainSection,
    pub model: ModelSection,
}

impl TrainConfig {
    /// Shortened recipe for synthetic runs: 40 epochs, milestones 15 and 30.
    pub fn desk_scale() -> Self {
        let mut cfg = Self::default();
        cfg.train.epochs = 40;
        cfg.optim.warmup_epochs = 5;
        cfg.optim.milestones = vec![15, 30];
        cfg
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn loss_config(&self) -> LossConfig<f64> {
        let l = &self.loss;
        LossConfig {
            scale: l.s,
            margin: l.m,
            margin_mode: l.margin_mode,
            alpha: l.alpha,
            beta: l.beta,
            lsr_eps: l.lsr_eps,
        }
    }

    pub fn schedule(&self) -> LrSchedule<f64> {
        let o = &self.optim;
        LrSchedule {
            base_lr: o.lr,
            warmup_start_lr: o.warmup_lr,
            warmup_epochs: o.warmup_epochs,
            milestones: o.milestones.clone(),
            decay: o.decay,
        }
    }

    pub fn adam(&self) -> AdamConfig<f64> {
        AdamConfig {
            weight_decay: self.optim.weight_decay,
            decoupled: self.optim.decoupled_weight_decay,
            ..AdamConfig::default()
        }
    }

    pub fn batch_size(&self) -> usize {
        self.train.p * self.train.q
    }

    pub fn validate(&self) -> Result<()> {
        self.loss_config().validate()?;
        self.schedule().validate()?;
        if self.loss.label_mode.uses_view_loss() && self.loss.alpha > crate::labels::VALSR_MAX_ALPHA {
            return Err(Error::InvalidConfig(format!(
                "alpha {} exceeds {} for the viewpoint-aware target",
                self.loss.alpha,
                crate::labels::VALSR_MAX_ALPHA
            )));
        }
        if self.train.p < 2 || self.train.q < 2 {
            return Err(Error::InvalidConfig("batch needs p >= 2 and q >= 2".into()));
        }
        if self.train.max_rank < 1 {
            return Err(Error::InvalidConfig("max_rank must be at least 1".into()));
        }
        let m = &self.model;
        if m.raw_dim < 1 || m.hidden < 1 || m.embed_dim < 2 {
            return Err(Error::InvalidConfig("model dimensions too small".into()));
        }
        if !(self.optim.weight_decay >= 0.0) || !(m.view_init_noise >= 0.0) {
            return Err(Error::InvalidConfig("weight decay and init noise must be non-negative".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_training_recipe() {
        let c = TrainConfig::default();
        c.validate().unwrap();
        assert_eq!(c.batch_size(), 64);
        assert_eq!(c.optim.milestones, vec![50, 100, 160]);
        assert_eq!(c.schedule().lr_at(0), 3.5e-5);
        assert_eq!(c.loss.alpha, 0.2);
        assert_eq!(c.optim.weight_decay, 5e-4);
        TrainConfig::desk_scale().validate().unwrap();
    }

    #[test]
    fn parses_partial_toml() {
        let c = TrainConfig::from_toml_str(
            r#"
            [loss]
            s = 16.0
            margin_mode = "cos_sub"
            label_mode = "alsr"

            [optim]
            lr = 0.01
            milestones = [15, 30]

            [train]
            epochs = 3
            p = 4
            q = 2
            "#,
        )
        .unwrap();
        assert_eq!(c.loss.s, 16.0);
        assert_eq!(c.loss.margin_mode, MarginMode::CosSub);
        assert_eq!(c.loss.label_mode, LabelMode::Alsr);
        assert_eq!(c.train.epochs, 3);
        assert_eq!(c.model.hidden, 64);
        let back = TrainConfig::from_toml_str(&c.to_toml_string()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn rejects_bad_values() {
        assert!(TrainConfig::from_toml_str("[train]\np = 1").is_err());
        assert!(TrainConfig::from_toml_str("[loss]\nm = 2.0").is_err());
        assert!(TrainConfig::from_toml_str("[loss]\nlabel_mode = \"nope\"").is_err());
        assert!(TrainConfig::from_toml_str("[optim]\nmilestones = [3]").is_err());
        assert!(TrainConfig::from_toml_str("[extra]\nx = 1").is_err());
    }
}
