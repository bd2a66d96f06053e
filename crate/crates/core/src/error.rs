//! Error type shared by every solver stage, with enough structure for the
//! CLI to map failures onto its exit-code table.

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum SlqError {
    /// Incompatible matrix or vector dimensions.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// A vector was declared as a half-vectorization but its length is not a
    /// triangular number.
    #[error("length {len} is not n(n+1)/2 for any integer n")]
    NotTriangularLength { len: usize },

    /// Control weight R fails the positive-definiteness requirement.
    #[error(
        "control weight R is not positive definite (smallest eigenvalue {min_eigenvalue:.6e})"
    )]
    RNotPositiveDefinite { min_eigenvalue: f64 },

    /// The Schur complement Q - S^T R^-1 S fails the positive-definiteness
    /// requirement.
    #[error("Q - S^T R^-1 S is not positive definite (smallest eigenvalue {min_eigenvalue:.6e})")]
    SchurComplementNotPositiveDefinite { min_eigenvalue: f64 },

    /// The supplied gain does not stabilize the closed loop in mean square.
    #[error(
        "gain is not a mean-square stabilizer (second-moment spectral abscissa {abscissa:.6e} >= 0)"
    )]
    NotStabilizer { abscissa: f64 },

    /// The generalized Lyapunov operator is singular, i.e. the closed loop is
    /// not mean-square stable for the gain in use.
    #[error("singular Lyapunov generator{}: closed loop is not mean-square stable", fmt_iteration(.iteration))]
    SingularGenerator { iteration: Option<usize> },

    /// An iterative solver hit its iteration cap before meeting its tolerance.
    #[error("no convergence after {iterations} iterations (last step norm {last_dp:.6e})")]
    NotConverged { iterations: usize, last_dp: f64 },

    /// A simulated state left the overflow guard region.
    #[error(
        "trajectory blowup on path {path} at step {step} (|x| > {guard:.1e}); \
         the gain may not be stabilizing or the step size too large"
    )]
    TrajectoryBlowup {
        path: usize,
        step: usize,
        guard: f64,
    },

    /// The regression matrix does not have full column rank, so the
    /// least-squares solution is not unique (typically: no exploration noise).
    #[error("data rank {rank} below required {required}: regressor is rank deficient")]
    RankDeficient { rank: usize, required: usize },

    /// A solver produced a non-finite or numerically meaningless iterate.
    #[error("numerical breakdown: {0}")]
    NumericalBreakdown(String),

    /// A malformed or inconsistent run configuration.
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    /// Configuration file could not be parsed.
    #[error("config parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn fmt_iteration(it: &Option<usize>) -> String {
    match it {
        Some(i) => format!(" at iteration {i}"),
        None => String::new(),
    }
}

pub type Result<T> = std::result::Result<T, SlqError>;
