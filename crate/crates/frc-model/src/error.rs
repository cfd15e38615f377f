//! Error types shared across the crate.

use thiserror::Error;

/// Errors raised by model construction, estimation and evaluation.
#[derive(Debug, Error)]
pub enum ModelError {
    /// Invalid model parameter (non-positive kappa, tau out of range, ...).
    #[error("invalid parameter: {0}")]
    Parameter(String),

    /// Invalid tenor grid.
    #[error("invalid grid: {0}")]
    Grid(String),

    /// Input outside the operation's domain (asymmetric matrix, bad shapes, ...).
    #[error("domain error: {0}")]
    Domain(String),

    /// Dimension mismatch between inputs.
    #[error("dimension mismatch: expected {expected}, got {actual} ({context})")]
    Dimension {
        expected: usize,
        actual: usize,
        context: String,
    },

    /// Numerical failure (singular matrix, quadrature non-convergence, instability).
    #[error("numerical error: {0}")]
    Numerical(String),

    /// A matrix was too ill-conditioned to invert reliably.
    #[error("ill-conditioned matrix in {context}: condition estimate {cond:.3e} exceeds {limit:.1e}")]
    IllConditioned {
        context: String,
        cond: f64,
        limit: f64,
    },

    /// Statistical estimation failed (not enough data, degenerate series).
    #[error("estimation error: {0}")]
    Estimation(String),

    /// A score is undefined (zero denominator in R-squared).
    #[error("undefined score: {0}")]
    UndefinedScore(String),
}
