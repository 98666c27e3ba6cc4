use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite value at index {index}: {value}")]
    NonFinite { index: usize, value: f64 },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("invalid weights: {0}")]
    InvalidWeights(String),

    #[error("design matrix is rank deficient (rank < {dim})")]
    RankDeficient { dim: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("label {label} out of range for {n_labels} classes")]
    LabelOutOfRange { label: f64, n_labels: usize },

    #[error("fit failed for hypothesized response {y}: {source}")]
    FitAt { y: f64, source: Box<Error> },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("unknown suite `{0}`")]
    UnknownSuite(String),

    #[error("sampler failed: {0}")]
    Sampler(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
