use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the allocation library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("unbounded best response: power price is zero and the SNR cap is unreachable")]
    Unbounded,

    #[error("power-price bisection did not converge after {iterations} iterations (bracket [{lo}, {hi}])")]
    NoConvergence { iterations: usize, lo: f64, hi: f64 },

    #[error("{field}[{index}] {reason}")]
    Validation {
        field: &'static str,
        index: usize,
        reason: String,
    },

    #[error("{field}: {reason}")]
    InvalidField { field: &'static str, reason: String },

    #[error("dimension mismatch for {field}: expected {expected} entries, found {found}")]
    Dimension {
        field: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("instance too large for exhaustive search: {0}")]
    TooLarge(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("malformed document: {0}")]
    Parse(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn validation(field: &'static str, index: usize, reason: impl Into<String>) -> Self {
        Error::Validation {
            field,
            index,
            reason: reason.into(),
        }
    }

    /// True for failures caused by NaN/non-convergence rather than bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::Numerical(_) | Error::NoConvergence { .. })
    }
}

pub type Result<T> = std::result::Result<T, Error>;
