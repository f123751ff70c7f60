use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {detail}")]
    Dimension { op: &'static str, detail: String },

    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },

    #[error("backward requires a 1x1 loss, got {rows}x{cols}")]
    NonScalarLoss { rows: usize, cols: usize },

    #[error("backward already ran on this tape; call clear_grads() first")]
    BackwardTwice,

    #[error("missing gradient for parameter {index}")]
    MissingGradient { index: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("format error in {path}: {detail}")]
    Format { path: String, detail: String },

    #[error("non-finite value at row {row}, col {col}")]
    NonFiniteValue { row: usize, col: usize },

    #[error("{0}")]
    Sampling(String),

    #[error("config error at {location}: {detail}")]
    Config { location: String, detail: String },

    #[error("checkpoint mismatch: {0}")]
    CheckpointMismatch(String),

    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn dim(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Dimension { op, detail: detail.into() }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// Short category name, used by the CLI to pick an exit code.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Dimension { .. } => "dimension",
            Error::NonFinite { .. } | Error::NonFiniteValue { .. } => "numeric",
            Error::NonScalarLoss { .. } | Error::BackwardTwice | Error::MissingGradient { .. } => {
                "autodiff"
            }
            Error::InvalidArgument(_) => "argument",
            Error::Format { .. } => "format",
            Error::Sampling(_) => "sampling",
            Error::Config { .. } => "config",
            Error::CheckpointMismatch(_) => "checkpoint",
            Error::Precondition(_) => "precondition",
            Error::Io { .. } => "io",
        }
    }
}
