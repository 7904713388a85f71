//! Error type shared by all estimation and data-handling modules.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration or specification (bad lag windows, empty
    /// selectors, out-of-range parameters).
    #[error("invalid configuration: {0}")]
    Config(String),

    /// Data-level violation: duplicate keys, missing variables, state
    /// errors on transforms.
    #[error("data error: {0}")]
    Data(String),

    /// A linear system was rank deficient. `labels` names the coefficient
    /// or instrument directions that could not be identified.
    #[error("singular system in {context}: deficient directions {labels:?}")]
    Singular { context: String, labels: Vec<String> },

    /// Non-finite values or failed numeric routines.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// An iterative solver did not reach its tolerance.
    #[error("{context}: no convergence after {iterations} iterations (best criterion {best})")]
    NoConvergence {
        context: String,
        iterations: usize,
        best: f64,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
    pub fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }
    pub fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
