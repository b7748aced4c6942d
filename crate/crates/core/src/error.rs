use thiserror::Error;

/// Errors raised across the library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("format error: {0}")]
    Format(String),

    #[error("value {value} outside representable range [{lo}, {hi})")]
    Range { value: f64, lo: f64, hi: f64 },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("shape mismatch: expected {expected}, got {got}")]
    Shape { expected: usize, got: usize },

    #[error("non-finite value {value} at sample {sample:?}")]
    NonFinite { value: f64, sample: Vec<f64> },

    #[error("target is not normalized; -ELBO = {neg_elbo}")]
    Unnormalized { neg_elbo: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("serialization: {0}")]
    Serialization(String),
}

pub type Result<T> = std::result::Result<T, Error>;
