//! Error type shared by all solver and simulation modules.

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

/// Failures reported by validation, solvers, and oracles.
#[derive(Debug, Clone, thiserror::Error)]
pub enum Error {
    /// A model or state parameter violates its domain restriction.
    #[error("domain error: {0}")]
    Domain(String),

    /// A grid does not satisfy the constraints required by a solver.
    #[error("grid error: {0}")]
    Grid(String),

    /// A requested simulation or surface would exceed the storage cap.
    #[error("allocation error: {0}")]
    Allocation(String),

    /// A nonlinear iteration exceeded its cap without converging.
    #[error("convergence error: {0}")]
    Convergence(String),

    /// The time step violates the monotonicity cap of the explicit part.
    #[error("stability error: {0}")]
    Stability(String),

    /// The regression design matrix is degenerate.
    #[error("regression error: {0}")]
    Regression(String),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn grid(msg: impl Into<String>) -> Self {
        Error::Grid(msg.into())
    }
}
