//! Error types shared across the crate.

use thiserror::Error;

/// Unified error type for data handling, matching and estimation.
#[derive(Debug, Error)]
pub enum Error {
    /// A required column is missing or the schema is otherwise unusable.
    #[error("schema error: {0}")]
    Schema(String),

    /// A cell could not be parsed as a number.
    #[error("parse error at row {row}, column '{column}': {detail}")]
    Parse {
        row: u64,
        column: String,
        detail: String,
    },

    /// Structurally valid input that violates a dataset invariant.
    #[error("validation error: {0}")]
    Validation(String),

    /// An argument outside its documented domain.
    #[error("invalid parameter: {0}")]
    Parameter(String),

    /// An estimation step could not be carried out on this input.
    #[error("estimation error: {0}")]
    Estimation(String),

    /// A regression or optimisation routine failed to produce a fit.
    #[error("fitting error: {0}")]
    Fitting(String),

    /// The balancing-weight constraints admit no solution at the requested
    /// tolerance; `min_max_imbalance` is the smallest worst-case imbalance
    /// found while probing feasibility.
    #[error(
        "balance constraints infeasible at delta={delta}: \
         minimal achievable max imbalance found was {min_max_imbalance}"
    )]
    Infeasible {
        delta: f64,
        min_max_imbalance: f64,
    },

    /// Underlying I/O failure.
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
