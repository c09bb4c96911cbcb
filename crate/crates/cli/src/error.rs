use std::path::PathBuf;

use thiserror::Error;

pub const EXIT_INPUT: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;
pub const EXIT_CONFIG: i32 = 4;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] npaft::Error),

    #[error("config error: {0}")]
    Config(String),

    #[error("input not found: {0}")]
    InputNotFound(PathBuf),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit status for this error.
    pub fn exit_code(&self) -> i32 {
        use npaft::Error as E;
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::InputNotFound(_) | CliError::Io { .. } => EXIT_INPUT,
            CliError::Core(e) => match e {
                E::InputNotFound(_)
                | E::Io(_)
                | E::Load { .. }
                | E::Schema(_)
                | E::Checksum(_)
                | E::LengthMismatch(_)
                | E::SingularDesign(_)
                | E::Fold { .. } => EXIT_INPUT,
                E::LikelihoodUnbounded(_)
                | E::NonConvergence { .. }
                | E::NonFinite { .. }
                | E::Numeric(_)
                | E::Calibration(_) => EXIT_NUMERIC,
                E::Config(_) | E::InvalidArgument(_) | E::CheckpointsAbsent => EXIT_CONFIG,
            },
        }
    }

    /// Subsystem named in the error message.
    pub fn module(&self) -> &'static str {
        match self {
            CliError::Core(e) => e.module(),
            CliError::InputNotFound(_) | CliError::Io { .. } => "data-model",
            CliError::Config(_) => "cli",
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
