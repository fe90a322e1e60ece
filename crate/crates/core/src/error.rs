use thiserror::Error;

/// Errors produced by the optimization toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("ill-conditioned dataset: {0}")]
    IllConditioned(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("point outside the unit box: {0:?}")]
    OutOfBounds(Vec<f64>),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("sobol dimension {requested} exceeds the direction-number table limit of {limit}")]
    SobolDimension { requested: usize, limit: usize },

    #[error("malformed direction-number table: {0}")]
    DirectionTable(String),

    #[error("insufficient p_* samples: batch size {batch} exceeds {available} samples")]
    InsufficientSamples { batch: usize, available: usize },

    #[error("invalid problem: {0}")]
    InvalidProblem(String),

    #[error("unknown {kind} id '{id}' (valid: {valid})")]
    UnknownId {
        kind: &'static str,
        id: String,
        valid: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
