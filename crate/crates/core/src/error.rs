use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("generator not standardizable: {label} has {what} = {value} at 0")]
    NotStandardizable {
        label: String,
        what: &'static str,
        value: f64,
    },

    #[error("grid incompatibility: {0}")]
    GridMismatch(String),

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("invalid density: {0}")]
    InvalidDensity(String),

    #[error("degenerate density: all values are zero")]
    DegenerateDensity,

    #[error("degenerate integral: {term} = {value} (must be finite and > 0)")]
    DegenerateIntegral { term: &'static str, value: f64 },

    #[error("{0} outside the domain")]
    OutOfDomain(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
}

impl Error {
    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::Parameter(msg.into())
    }
}
