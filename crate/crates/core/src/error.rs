use thiserror::Error;

use crate::descent::Trajectory;

/// Errors raised by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("{what} = {value} is outside [{lo}, {hi}]")]
    OutOfRange {
        what: &'static str,
        value: f64,
        lo: f64,
        hi: f64,
    },

    /// A non-finite value or gradient showed up. `partial` holds every step
    /// up to and including `last_valid`.
    #[error("divergence after step {last_valid}")]
    Divergence {
        last_valid: usize,
        partial: Box<Trajectory>,
    },

    #[error("reference flow diverged at t = {time}")]
    FlowDivergence { time: f64 },

    /// A numerical check of a proven property came out false.
    #[error("check failed: {0}")]
    CheckFailed(String),

    #[error("unknown function `{0}`")]
    UnknownFunction(String),

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}

pub(crate) fn precondition(msg: impl Into<String>) -> Error {
    Error::Precondition(msg.into())
}
