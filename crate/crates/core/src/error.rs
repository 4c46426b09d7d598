use thiserror::Error;

/// Errors raised by the point-pattern toolkit.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("dimension must be at least 1")]
    ZeroDimension,

    #[error("non-finite coordinate in point {index}")]
    NonFinite { index: usize },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("insufficient points for {what}: need at least {needed}, found {found}")]
    InsufficientPoints {
        what: &'static str,
        needed: usize,
        found: usize,
    },

    #[error("cardinality {cardinality} exceeds the categorical support maximum {max}")]
    CardinalityOutOfSupport { cardinality: usize, max: usize },

    #[error("class {0} has no training patterns")]
    EmptyClass(usize),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("unsupported operation: {0}")]
    Unsupported(&'static str),

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("novelty threshold has not been fitted")]
    ThresholdNotFitted,

    #[error("covariance is not positive definite")]
    NotPositiveDefinite,

    #[error("inconsistent sampler state: {0}")]
    InconsistentState(String),
}

impl Error {
    /// True for failures caused by the numerics (degenerate fits, singular
    /// matrices) rather than by malformed input.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::InsufficientPoints { .. } | Error::NotPositiveDefinite)
    }
}

pub type Result<T> = std::result::Result<T, Error>;
