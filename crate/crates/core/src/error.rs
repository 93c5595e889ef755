use thiserror::Error;

/// Errors raised by the core library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter `{field}`: {reason}")]
    InvalidParameter { field: String, reason: String },

    #[error("point outside the domain of the operation: {0}")]
    Domain(String),

    #[error("kernel is not Levy-integrable: {0}")]
    NonIntegrable(String),

    #[error("matrix is not symmetric (asymmetry {asymmetry:.3e}, tolerance {tolerance:.3e})")]
    Asymmetric { asymmetry: f64, tolerance: f64 },

    #[error("scheme is not monotone at node {node} for control pair ({a}, {b}): {detail}")]
    NotMonotone {
        node: usize,
        a: usize,
        b: usize,
        detail: String,
    },

    #[error("iteration did not converge after {iterations} steps (residual {residual:.3e})")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("monotone ordering violated at node {node}: {detail}")]
    OrderingViolation { node: usize, detail: String },

    #[error("barrier construction failed: {0}")]
    Construction(String),

    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("i/o error: {0}")]
    Io(String),

    #[error("parse error: {0}")]
    Parse(String),
}

impl Error {
    pub(crate) fn param(field: &str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            field: field.to_string(),
            reason: reason.into(),
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
