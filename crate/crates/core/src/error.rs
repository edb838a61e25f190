use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// A specification or configuration value failed validation.
    #[error("validation: {0}")]
    Validation(String),
    /// An argument lies outside the mathematical domain of an operation.
    #[error("domain: {0}")]
    Domain(String),
    /// A time or index argument is out of range.
    #[error("range: {0}")]
    Range(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    /// An iterative solver hit its iteration cap; carries the best iterate found.
    #[error("solver did not converge after {iterations} iterations ({context})")]
    NonConvergence {
        iterations: usize,
        context: String,
        best: Vec<f64>,
    },
    #[error("infeasible: {0}")]
    Infeasible(String),
    /// A scheduling policy produced a rate vector outside the capacity region.
    #[error("policy violation at t={t}: rate vector {rates:?} is not feasible")]
    PolicyViolation { t: f64, rates: Vec<f64> },
    #[error("config {path}:{line}: {message}")]
    Config {
        path: String,
        line: usize,
        message: String,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
