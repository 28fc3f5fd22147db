use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the evaluation toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed row at line {line}: {reason}")]
    MalformedRow { line: usize, reason: String },

    #[error("no data left: {0}")]
    EmptyResult(String),

    #[error("too few households: {side} would receive {count} (need at least 2)")]
    TooFewHouseholds { side: &'static str, count: usize },

    #[error("horizon mismatch: expected {expected} slots, found {found}")]
    HorizonMismatch { expected: usize, found: usize },

    #[error("insufficient samples: {0}")]
    InsufficientSamples(String),

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("q has zero mass at index {index} where p = {p}")]
    ZeroMass { index: usize, p: f64 },

    #[error("max lag {max_lag} must be below horizon {horizon}")]
    LagTooLarge { max_lag: usize, horizon: usize },

    #[error("covariance has only {positive} positive eigenvalues, need {needed}")]
    RankDeficient { positive: usize, needed: usize },

    #[error("need at least {needed} rows, got {got}")]
    TooFewRows { needed: usize, got: usize },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("degenerate mixture component {0}")]
    DegenerateComponent(usize),

    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },

    #[error("profiles are missing season labels")]
    MissingLabels,

    #[error("threshold ratio {0} was not computed")]
    RatioNotComputed(f64),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("manifest: {0}")]
    Manifest(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
