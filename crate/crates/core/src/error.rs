use std::path::PathBuf;

use thiserror::Error;

/// Errors raised while building, fitting, or querying a model.
#[derive(Debug, Error)]
pub enum Error {
    #[error("empty reference set")]
    EmptyReferenceSet,

    #[error("duplicate reference location at ordered position {0}")]
    DuplicateReference(usize),

    #[error("degenerate graph: {0}")]
    DegenerateGraph(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("singular covariance matrix ({0}); consider removing near-duplicate locations or adding jitter")]
    Singular(String),

    #[error("degenerate BLUP: kriging weights sum to {0:e}")]
    DegenerateBlup(f64),

    #[error("inner divergence: {0}")]
    InnerDivergence(String),

    #[error("saddle at inner mode (Hessian not positive definite at row {0})")]
    SaddleAtMode(usize),

    #[error("data error at row {row}, column '{column}': {message}")]
    Data {
        row: usize,
        column: String,
        message: String,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("unsupported fit artifact version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
