//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    // tensor ops
    #[error("tensors have mismatched lengths: {0} vs {1}")]
    MismatchedLength(usize, usize),
    #[error("input is not a probability distribution: {0}")]
    NotADistribution(String),
    #[error("standard deviation must be non-negative, got {0}")]
    NegativeStd(f64),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    // model
    #[error("clip bound must be positive, got {0}")]
    NonPositiveClip(f64),
    #[error("dataset is empty")]
    EmptyDataset,

    // dp mechanism
    #[error("delta must lie in (0, 1), got {0}")]
    InvalidDelta(f64),
    #[error("epsilon must be positive, got {0}")]
    InvalidEpsilon(f64),
    #[error("{name} must be positive, got {value}")]
    NonPositiveInput { name: &'static str, value: f64 },

    // federation
    #[error("need at least {needed} clients, got {got}")]
    TooFewClients { needed: usize, got: usize },
    #[error("dataset has no samples of class {0}")]
    MissingClass(usize),
    #[error("activation rate must lie in (0, 1], got {0}")]
    InvalidRate(f64),
    #[error("aggregation collection is empty")]
    EmptyCollection,
    #[error("client {0} has an empty dataset")]
    EmptyClientDataset(usize),

    // accountant / convergence calculator
    #[error("invalid privacy budget: epsilon {epsilon}, delta {delta}")]
    InvalidBudget { epsilon: f64, delta: f64 },
    #[error("invalid sampling sizes: batch {batch}, dataset {dataset}")]
    InvalidSizes { batch: usize, dataset: usize },
    #[error("invalid convergence constants: {0}")]
    InvalidConstants(String),
    #[error("eta {eta} lies outside the admissible window ({lower}, {upper})")]
    EtaOutOfWindow { eta: f64, lower: f64, upper: f64 },

    // config and data files
    #[error("config parse error: {0}")]
    ParseError(String),
    #[error("invalid value for `{field}`: {message}")]
    ValidationError { field: String, message: String },
    #[error("malformed file at byte {offset}: {message}")]
    FormatError { offset: u64, message: String },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for errors that indicate a bad configuration rather than a
    /// failure while running (drives the CLI exit-code contract).
    pub fn is_config_error(&self) -> bool {
        matches!(self, Error::ParseError(_) | Error::ValidationError { .. })
    }
}
