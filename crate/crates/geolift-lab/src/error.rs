//! Error types shared across the crate.

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

/// Errors produced by panel construction, simulation, estimation, and I/O.
#[derive(Debug, Error)]
pub enum Error {
    /// A configuration value is out of its admissible range.
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    /// Panel data violates a structural requirement (shapes, flags, signs).
    #[error("invalid panel: {0}")]
    InvalidPanel(String),

    /// An estimator cannot run on this panel (too few units, missing inputs).
    #[error("estimator inputs unusable: {0}")]
    EstimatorInput(String),

    /// A numerical routine degenerated (singular system, zero denominator).
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// CSV or JSON payload could not be parsed into the expected shape.
    #[error("malformed data: {0}")]
    Parse(String),

    /// Underlying I/O failure.
    #[error("i/o failure: {0}")]
    Io(#[from] std::io::Error),

    /// CSV layer failure.
    #[error("csv failure: {0}")]
    Csv(#[from] csv::Error),

    /// JSON (de)serialization failure.
    #[error("json failure: {0}")]
    Json(#[from] serde_json::Error),
}
