//! Crate-wide error type.

use thiserror::Error;

/// Everything that can go wrong inside the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("eigenvalue iteration did not converge after {sweeps} sweeps on {matrix}")]
    NonConvergence { sweeps: usize, matrix: String },

    #[error("policy-frozen linear solve stagnated after {sweeps} sweeps (residual {residual:e})")]
    LinearSolve { sweeps: usize, residual: f64 },

    #[error("matrix is not positive semidefinite (smallest eigenvalue {min_eigenvalue:e})")]
    NotPsd { min_eigenvalue: f64 },

    #[error("matrix lies outside the closed cone (most negative Garding eigenvalue {min_eigenvalue:e})")]
    ConeViolation { min_eigenvalue: f64 },

    #[error("polynomial is not hyperbolic here: {detail}")]
    Hyperbolicity { detail: String },

    #[error("minimal eigenvalue is not simple (gap {gap:e}); operator not differentiable here")]
    NonDifferentiable { gap: f64 },

    #[error("derivative order {order} must be below degree {degree}")]
    Degree { order: usize, degree: usize },

    #[error("gradient trace {trace:e} too small for a control")]
    DegenerateControl { trace: f64 },

    #[error("no control survived the margin filter")]
    NoControls,

    #[error("bisection bracket failure: {0}")]
    Bracket(String),

    #[error("point is not on the boundary (rho = {rho:e})")]
    NotOnBoundary { rho: f64 },

    #[error("certification failed: {0}")]
    Certification(String),

    #[error("grid resolution: {0}")]
    Resolution(String),

    #[error("interpolation stencil leaves the bounding box at node {node}")]
    StencilEscape { node: usize },

    #[error("realm mismatch: {0}")]
    RealmMismatch(String),

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
