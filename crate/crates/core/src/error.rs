use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("time index {t} outside 0..={max}")]
    TimeOutOfRange { t: usize, max: usize },

    #[error("shape mismatch: expected {expected:?}, got {actual:?}")]
    ShapeMismatch { expected: Vec<usize>, actual: Vec<usize> },

    #[error("non-finite value at element {index}")]
    NonFinite { index: usize },

    #[error("unknown condition {0}")]
    UnknownCondition(String),

    #[error("degenerate covariance at t = {t}")]
    DegenerateCovariance { t: usize },

    #[error("trace mismatch at call {index}: {reason}")]
    TraceMismatch { index: usize, reason: String },

    #[error("trace exhausted after {calls} calls")]
    TraceExhausted { calls: usize },

    #[error("malformed trace: {0}")]
    MalformedTrace(String),

    #[error("input too small: {0}")]
    InputTooSmall(String),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }
}
