use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("vector norm {norm:e} is below the zero threshold")]
    ZeroVector { norm: f64 },

    #[error("vector norm {norm} is not unit (tolerance {tol:e})")]
    NotUnitNorm { norm: f64, tol: f64 },

    #[error("{what} index {index} out of range 0..{len}")]
    IndexOutOfRange { what: &'static str, index: usize, len: usize },

    #[error("invalid smoothing parameter {0}")]
    InvalidSmoothing(f64),

    #[error("invalid label distribution: {0}")]
    InvalidDistribution(String),

    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("invalid flip rate {0}, expected a value in [0, 1]")]
    InvalidRate(f64),

    #[error("{path}:{line}: {msg}")]
    Parse { path: PathBuf, line: usize, msg: String },

    #[error("no query has a valid positive in the gallery")]
    NoValidPositive,

    #[error("need {needed} identities with training samples, found {found}")]
    TooFewIdentities { needed: usize, found: usize },

    #[error("non-finite loss at epoch {epoch}, step {step}")]
    NonFiniteLoss { epoch: usize, step: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
