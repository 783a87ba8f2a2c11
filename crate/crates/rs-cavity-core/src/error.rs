use alloc::string::String;

/// Errors raised by the core numerics.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid dimension: {0}")]
    InvalidDimension(usize),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("argument {0} is outside the domain of the principal Lambert W branch")]
    OutOfDomain(f64),
    #[error("matrix is singular or not positive definite")]
    SingularMatrix,
    #[error("non-finite integrand at node (t={t}, q={q}, z0={z0})")]
    NonFiniteIntegrand { t: f64, q: f64, z0: f64 },
    #[error("inner root solve failed at a={a}, b={b}")]
    RootSolve { a: f64, b: f64 },
    #[error("no bracket found for target zeta {target}: {reason}")]
    Range { target: f64, reason: String },
    #[error("degenerate regime: {0}")]
    Degenerate(String),
    #[error("fixed point did not converge after {iterations} iterations (residual {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },
}

pub type Result<T> = core::result::Result<T, Error>;
