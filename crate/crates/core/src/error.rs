use std::path::PathBuf;

use thiserror::Error;

/// Every failure surfaced by the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("input shape mismatch: {0}")]
    Shape(String),

    #[error("invalid input: {0}")]
    Validation(String),

    #[error("covariance factorization failed after jitter escalation (last jitter {jitter:e})")]
    Conditioning { jitter: f64 },

    #[error("hyperparameter fitting failed: {0}")]
    Fitting(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("infeasible constraints: {certificate}")]
    Infeasible { certificate: String },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("row {line}: {message}")]
    Row { line: u64, message: String },

    #[error("campaign store version {found} cannot be read by this build (expected {expected})")]
    Migration { found: u32, expected: u32 },

    #[error("integrity error for snapshot {digest}: {message}")]
    Integrity { digest: String, message: String },

    #[error("campaign {0} not found")]
    NotFound(String),

    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Stable machine-readable code, shared by the HTTP API and the C ABI.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Shape(_) => "shape",
            Error::Validation(_) => "validation",
            Error::Conditioning { .. } => "conditioning",
            Error::Fitting(_) => "fitting",
            Error::InsufficientData(_) => "insufficient_data",
            Error::Config(_) => "config",
            Error::Infeasible { .. } => "infeasible",
            Error::Schema(_) => "schema",
            Error::Row { .. } => "row",
            Error::Migration { .. } => "migration",
            Error::Integrity { .. } => "integrity",
            Error::NotFound(_) => "not_found",
            Error::Io { .. } => "io",
            Error::Json(_) => "json",
            Error::Csv(_) => "csv",
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
