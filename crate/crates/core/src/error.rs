//! Error type shared across the crate.

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Error, Debug)]
pub enum Error {
    /// Underlying I/O failure while reading or writing panel/report files.
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    /// A CSV cell failed to parse; positions are 1-based.
    #[error("parse error at row {row}, column {col}: {msg}")]
    Parse { row: usize, col: usize, msg: String },

    /// Structurally invalid panel data (ragged rows, empty series, non-finite values).
    #[error("invalid panel: {0}")]
    Panel(String),

    /// An argument violated a documented precondition.
    #[error("invalid input: {0}")]
    Invalid(String),

    /// An iterative solver stopped before meeting its tolerance. The last iterate
    /// and its projected-gradient norm are retained for diagnostics.
    #[error("solver did not converge: {msg} (projected-gradient norm {kkt_residual:.3e} after {iterations} iterations)")]
    Solver {
        msg: String,
        iterations: usize,
        kkt_residual: f64,
        last_iterate: Vec<f64>,
    },

    /// Malformed experiment configuration.
    #[error("config error: {0}")]
    Config(String),

    /// Configuration or report (de)serialization failure.
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}
