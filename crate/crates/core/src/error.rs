use thiserror::Error;

/// Errors raised by the placement toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("time grid error: {0}")]
    Grid(String),

    /// A weight that must be positive definite is not, at the named grid node.
    #[error("ill-conditioned {what} at node {node}")]
    Conditioning { what: String, node: usize },

    /// The observation noise covariance is not coercive at the named node.
    #[error("observation noise covariance not positive definite at node {node}")]
    Coercivity { node: usize },

    #[error("no convergence after {iterations} iterations (last residual {residual:e})")]
    Iteration { iterations: usize, residual: f64 },

    #[error("not positive semidefinite: {0}")]
    NotPsd(String),

    #[error("ordering error: {0}")]
    Ordering(String),

    #[error("domain error: {0}")]
    Domain(String),

    /// CFL violation on the named axis.
    #[error("unstable configuration on axis {axis}: Courant number {courant} exceeds 1")]
    Stability { axis: char, courant: f64 },

    #[error("solver failure: {0}")]
    Solver(String),

    #[error("hierarchy error: {0}")]
    Hierarchy(String),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("every candidate failed; first failure: {0}")]
    SweepFailed(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
