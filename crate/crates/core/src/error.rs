//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by model construction, calibration, and the solvers.
#[derive(Debug, Error)]
pub enum Error {
    /// A parameter is outside its mathematical domain.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// Vector or matrix dimensions do not agree.
    #[error("dimension mismatch: expected {expected}, got {got} ({context})")]
    DimensionMismatch {
        expected: usize,
        got: usize,
        context: &'static str,
    },

    /// A matrix that must be positive semidefinite is not, beyond tolerance.
    #[error("matrix not positive semidefinite: {0}")]
    NotPositiveSemidefinite(String),

    /// The requested constraint set admits no feasible allocation.
    #[error("infeasible constraints: {0}")]
    Infeasible(String),

    /// An operation was called outside its documented contract.
    #[error("contract violation: {0}")]
    ContractViolation(String),

    /// An iterative routine failed to reach its accuracy target.
    #[error("did not converge after {iterations} iterations (residual {residual:.3e})")]
    NonConvergence { iterations: usize, residual: f64 },

    /// Too few samples for the requested estimate.
    #[error("insufficient samples: {0}")]
    InsufficientSamples(String),

    /// An internal invariant failed; indicates a bug, not bad input.
    #[error("internal error: {0}")]
    Internal(String),
}

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;
