use std::path::PathBuf;

use crate::quadrature::QuadratureError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error(transparent)]
    Quadrature(#[from] QuadratureError),
    #[error("integrator failure: {0}")]
    Integrator(String),
    #[error("negative variance {value:e} for {name}")]
    NegativeVariance { name: &'static str, value: f64 },
    #[error("budget exceeded: {0}")]
    Budget(String),
    #[error("detection failed: {0}")]
    Detection(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed file {path}: {reason}")]
    Format { path: PathBuf, reason: String },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Stable identifier used in the single-line error report of the CLI.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidParameter(_) => "invalid_parameter",
            Error::Quadrature(_) => "quadrature",
            Error::Integrator(_) => "integrator",
            Error::NegativeVariance { .. } => "negative_variance",
            Error::Budget(_) => "budget",
            Error::Detection(_) => "detection",
            Error::Io { .. } => "io",
            Error::Format { .. } => "format",
            Error::Json(_) => "json",
        }
    }
}
