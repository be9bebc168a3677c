use thiserror::Error;

/// Errors raised by the selection engine.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("data contains non-finite values ({0})")]
    NonFiniteData(&'static str),

    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("optimization diverged at iteration {iter}: logit magnitude {magnitude:e}")]
    Diverged { iter: usize, magnitude: f64 },

    #[error("empty lambda region: lower bound {lo} is not below upper bound {hi}")]
    EmptyRegion { lo: f64, hi: f64 },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("problem too large for enumeration: p = {p} exceeds cap {max}")]
    TooLarge { p: usize, max: usize },

    #[error("noise standard deviation is zero")]
    ZeroNoise,

    #[error("true signal has zero variance")]
    ZeroSignal,

    #[error("cannot aggregate an empty list of reports")]
    EmptyList,

    #[error("parse error at row {row}, column {col}: {msg}")]
    Parse { row: usize, col: usize, msg: String },

    #[error("target column `{0}` not found")]
    MissingTarget(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
