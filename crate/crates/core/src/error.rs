use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("covariance is not positive definite even after regularization")]
    NotPositiveDefinite,

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("sequence length mismatch: {0}")]
    LengthMismatch(String),

    #[error("non-finite responsibilities in EM iteration {iteration}")]
    NumericalFailure { iteration: usize },

    #[error("decoding inconsistency: {0}")]
    DecodingInconsistency(String),

    #[error("gram matrix factorization failed with noise variance {noise_var}")]
    GramFactorization { noise_var: f64 },

    #[error("environment failure: {0}")]
    Env(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("unsupported schema version {found} (expected {expected})")]
    SchemaVersion { expected: u32, found: u32 },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
