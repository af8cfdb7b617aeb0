use thiserror::Error;

/// Errors raised by the numerical kernels and the analyses built on them.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("matrix of {entries} entries exceeds the size limit of {limit}")]
    SizeLimit { entries: usize, limit: usize },

    #[error("matrix is singular to working precision (condition estimate {condition:.3e})")]
    Singular { condition: f64 },

    #[error("matrix is not symmetric (max deviation {deviation:.3e}, tolerance {tolerance:.3e})")]
    NotSymmetric { deviation: f64, tolerance: f64 },

    #[error("matrix is not positive definite (pivot {pivot:.3e})")]
    NotPositiveDefinite { pivot: f64 },

    #[error("eigenvalue iteration did not converge for a {dim}x{dim} matrix")]
    NoConvergence { dim: usize },

    #[error("trajectory diverged at step {step}")]
    Divergence { step: usize },

    #[error("A is not Schur stable (spectral radius {rho:.6})")]
    Unstable { rho: f64 },

    #[error("reachability Gramian does not exist: rho(A(x)A + sum F(x)F) = {rho:.6} >= 1")]
    GramianNonexistent { rho: f64 },

    #[error("series did not converge after {order} terms (last term norm {last_norm:.3e})")]
    Truncation { order: usize, last_norm: f64 },

    #[error("Lyapunov residual {residual:.3e} exceeds tolerance {tolerance:.3e}")]
    Residual { residual: f64, tolerance: f64 },

    #[error(
        "Gramian is rank deficient (lambda_min/lambda_max = {ratio:.3e}); \
         target states outside Im(W) are unreachable, see image_invariance_check"
    )]
    RankDeficient { ratio: f64 },

    #[error("negative discriminant {discriminant:.3e} in beta: input cap inapplicable")]
    Discriminant { discriminant: f64 },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("{count} subsets exceed the combinatorial budget of {budget}; use greedy selection")]
    Budget { count: u128, budget: u128 },
}

pub type Result<T> = std::result::Result<T, Error>;
