//! Error types shared across the solver library.

use thiserror::Error;

/// Errors produced by grid operations, transfer kernels, and solvers.
#[derive(Debug, Error)]
pub enum IbfdError {
    /// Invalid configuration detected before any compute.
    #[error("configuration error: {0}")]
    Config(String),

    /// A linear solve failed to reach the requested tolerance.
    #[error("solver error: {context} (residual {residual:.3e}, tolerance {tolerance:.3e})")]
    SolverFailure {
        context: String,
        residual: f64,
        tolerance: f64,
    },

    /// A Lagrangian marker fell outside the kernel-support inset of the domain.
    #[error("marker at ({x:.6}, {y:.6}) is outside the domain inset by the kernel support ({half_width} cells)")]
    OutOfSupport { x: f64, y: f64, half_width: f64 },

    /// An MLS neighborhood had too few unmasked points or an ill-conditioned Gram matrix.
    #[error("degenerate MLS neighborhood at ({x:.6}, {y:.6}): {reason}")]
    DegenerateNeighborhood { x: f64, y: f64, reason: String },

    /// A time-step request violated a stability limit.
    #[error("time step {dt:.3e} violates the {kind} stability limit; suggested dt <= {suggested:.3e}")]
    CflViolation {
        kind: &'static str,
        dt: f64,
        suggested: f64,
    },

    /// All-Neumann data whose discrete compatibility defect is too large to repair.
    #[error("incompatible Neumann problem: compatibility defect {defect:.3e}")]
    IncompatibleData { defect: f64 },

    /// A matrix factorization broke down.
    #[error("factorization failure: {0}")]
    Factorization(String),
}

impl IbfdError {
    pub fn config(msg: impl Into<String>) -> Self {
        IbfdError::Config(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, IbfdError>;
