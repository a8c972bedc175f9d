//! Viewpoint-aware angular metric learning on the unit hypersphere.
//!
//! An embedder maps raw features onto the sphere; two normalized softmax
//! heads score the embedding against identity centers and against
//! identity/viewpoint centers, with an angular margin on the target and
//! adaptive soft targets. A regularizer pulls each viewpoint center toward
//! its identity center. Around that core sit a synthetic data generator, a
//! trainer, an ablation runner, a retrieval evaluator and a finite-difference
//! gradient checker.
//!
//! The numeric modules are generic over [`Scalar`] (`f32`/`f64`); the
//! aliases below fix them to `f64`, which is what the trainer, the data
//! files and the gradient checks use.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod ablate;
pub mod config;
pub mod data;
pub mod embed;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod gradcheck;
pub mod labels;
pub mod loss;
pub mod optim;
pub mod sampler;
pub mod scalar;
pub mod train;

pub use config::TrainConfig;
pub use data::{Sample, Split, SynthConfig};
pub use error::{Error, Result};
pub use eval::{EvalReport, Tag};
pub use loss::{LabelMode, MarginMode};
pub use scalar::Scalar;
pub use train::{MetricsRow, Model, TrainOutcome};

pub type LabelDistribution = labels::LabelDistribution<f64>;
pub type LossConfig = loss::LossConfig<f64>;
pub type ClassifierParams = loss::ClassifierParams<f64>;
pub type LossOutput = loss::LossOutput<f64>;
pub type EmbedderParams = embed::EmbedderParams<f64>;
pub type LrSchedule = optim::LrSchedule<f64>;
pub type AdamConfig = optim::AdamConfig<f64>;
pub type AdamState = optim::AdamState<f64>;
