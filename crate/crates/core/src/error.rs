use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Coarse classification used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    /// The caller passed an out-of-range parameter.
    Argument,
    /// Input data is malformed, inconsistent or too small.
    Data,
    /// A numerical procedure failed (collapse, divergence, non-SPD matrix).
    Numerical,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("not a GIQF file")]
    BadMagic,

    #[error("unsupported {what} version {found} (expected {expected})")]
    VersionMismatch {
        what: &'static str,
        found: u64,
        expected: u64,
    },

    #[error("truncated payload: {0}")]
    Truncated(String),

    #[error("malformed input: {0}")]
    Format(String),

    #[error("non-finite value at row {row}, col {col}")]
    NonFinite { row: usize, col: usize },

    #[error("duplicate id {0:?}")]
    DuplicateId(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("zero total variance: all rows are identical")]
    ZeroVariance,

    #[error("query coincides with reference point {id:?}")]
    ExactMatch { id: String },

    #[error("k = {k} out of range for a reference set of {size}")]
    KOutOfRange { k: usize, size: usize },

    #[error("covariance is not positive-definite: {0}")]
    NotPositiveDefinite(String),

    #[error("EM collapse: {0}")]
    Degenerate(String),

    #[error("head {head} sees a single class in the training data ({detail})")]
    SingleClassHead { head: usize, detail: String },

    #[error("training diverged at epoch {epoch}: loss is not finite")]
    Diverged { epoch: usize },

    #[error("score table has no normalized column")]
    MissingNormalization,

    #[error("ids not found in score table: {}", .0.join(", "))]
    MissingIds(Vec<String>),

    #[error("checksum mismatch for {path}: manifest {expected}, file {found}")]
    ChecksumMismatch {
        path: PathBuf,
        expected: String,
        found: String,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::InvalidArgument(_) => ErrorCategory::Argument,
            Error::NotPositiveDefinite(_) | Error::Degenerate(_) | Error::Diverged { .. } => {
                ErrorCategory::Numerical
            }
            _ => ErrorCategory::Data,
        }
    }
}
