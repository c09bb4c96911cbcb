use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the model pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("input not found: {0}")]
    InputNotFound(PathBuf),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("load error at row {row}, column `{column}`: {reason}")]
    Load {
        row: usize,
        column: String,
        reason: String,
    },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("likelihood unbounded: {0}")]
    LikelihoodUnbounded(String),

    #[error("optimizer did not converge after {iterations} iterations (gradient norm {grad_norm:e})")]
    NonConvergence { iterations: usize, grad_norm: f64 },

    #[error("numeric failure at iteration {iteration}: {quantity} is not finite")]
    NonFinite { iteration: usize, quantity: String },

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("calibration failed: {0}")]
    Calibration(String),

    #[error("forest checkpoints were not retained; refit with `retain_forests = true`")]
    CheckpointsAbsent,

    #[error("length mismatch: {0}")]
    LengthMismatch(String),

    #[error("singular design; collinear columns: {0:?}")]
    SingularDesign(Vec<String>),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("draw file corrupt: {0}")]
    Checksum(String),

    #[error("fold {fold}: {reason}")]
    Fold { fold: usize, reason: String },
}

impl Error {
    /// Short name of the subsystem the error originates from.
    pub fn module(&self) -> &'static str {
        match self {
            Error::InputNotFound(_) | Error::Io(_) | Error::Load { .. } | Error::Schema(_) => {
                "data-model"
            }
            Error::LikelihoodUnbounded(_) | Error::NonConvergence { .. } => "data-model",
            Error::Calibration(_) => "cdp-residual",
            Error::NonFinite { .. } | Error::CheckpointsAbsent => "gibbs-engine",
            Error::SingularDesign(_) => "hte-analysis",
            Error::Fold { .. } => "sim-bench",
            Error::Checksum(_) => "draws",
            Error::Config(_)
            | Error::Numeric(_)
            | Error::LengthMismatch(_)
            | Error::InvalidArgument(_) => "core",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
