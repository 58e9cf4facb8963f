use std::path::PathBuf;

use crate::net::ActivationKind;

/// Errors produced by the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid architecture: {0}")]
    InvalidArchitecture(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{0} activation has no odd decomposition with constant even part")]
    NoOddDecomposition(ActivationKind),

    #[error("{0} activation is not twice differentiable")]
    NotDifferentiable(ActivationKind),

    #[error("logistic likelihood requires targets in {{0, 1}}, got {0}")]
    NonBinaryTarget(f64),

    #[error("non-finite objective encountered at step {step}")]
    NonFinite { step: usize },

    #[error("covariance is not positive semidefinite: {0}")]
    NotPositiveSemidefinite(String),

    #[error("Cholesky factorization failed after jitter escalation (last jitter {jitter:e})")]
    Factorization { jitter: f64 },

    #[error("activation/inputs give no even-part separation: lambda(x) = lambda(x') = {0}")]
    NoSeparation(f64),

    #[error("{path}: no data rows")]
    NoDataRows { path: PathBuf },

    #[error("{path}: row {row}: expected {expected} columns, found {found}")]
    ColumnCount {
        path: PathBuf,
        row: usize,
        expected: usize,
        found: usize,
    },

    #[error("{path}: row {row}, column {col}: cannot parse {value:?} as a number")]
    NonNumeric {
        path: PathBuf,
        row: usize,
        col: usize,
        value: String,
    },

    #[error("{path}: unknown column {name:?}")]
    UnknownColumn { path: PathBuf, name: String },

    #[error("column {0:?} has zero standard deviation")]
    DegenerateColumn(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
