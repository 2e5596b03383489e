use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("bad input: {0}")]
    BadInput(String),

    #[error("universe mismatch: {0}")]
    UniverseMismatch(String),

    #[error("insufficient data: need at least {needed} rows, got {got}")]
    InsufficientData { needed: usize, got: usize },

    #[error("degenerate series: {0}")]
    DegenerateSeries(String),

    #[error("covariance matrix is singular or ill-conditioned (condition number {condition:.3e})")]
    SingularCovariance { condition: f64 },

    #[error("tangency portfolio undefined: 1'S^-1 mu = {denominator:.3e}")]
    DegenerateTangency { denominator: f64 },

    #[error("risk aversion must be positive, got {0}")]
    NonPositiveAversion(f64),

    #[error("missing input: {0}")]
    MissingInput(String),

    #[error("chart has no series")]
    EmptyChart,

    #[error("portfolio `{scheme}` lost all wealth on {date}")]
    Ruin { scheme: String, date: chrono::NaiveDate },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("toml: {0}")]
    Toml(#[from] toml::de::Error),
}

/// Coarse classification used by front ends to pick exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    /// Caller supplied something invalid (paths, flags, parameters).
    Input,
    /// The data itself cannot support the requested computation.
    Data,
    /// Anything else.
    Internal,
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::BadInput(_)
            | Error::UniverseMismatch(_)
            | Error::MissingInput(_)
            | Error::NonPositiveAversion(_)
            | Error::Io { .. }
            | Error::Toml(_) => ErrorClass::Input,
            Error::InsufficientData { .. }
            | Error::DegenerateSeries(_)
            | Error::SingularCovariance { .. }
            | Error::DegenerateTangency { .. }
            | Error::Ruin { .. }
            | Error::Csv(_) => ErrorClass::Data,
            Error::EmptyChart | Error::Json(_) => ErrorClass::Internal,
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
