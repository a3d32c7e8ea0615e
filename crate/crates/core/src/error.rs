use num_complex::Complex64;

/// Errors raised by model construction, frequency-domain evaluation and
/// synthesis routines.
#[derive(Debug, Clone, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("model assumption violated: {0}")]
    AssumptionViolation(String),

    /// lambda is (numerically) a characteristic root, so the resolvent in the
    /// transfer function does not exist there.
    #[error("characteristic matrix is singular at lambda = {lambda} (rcond {rcond:.2e})")]
    SingularAtFrequency { lambda: Complex64, rcond: f64 },

    /// The algebraic part drops rank somewhere on the torus; the asymptotic
    /// transfer function is unbounded and the strong norm does not exist.
    #[error("asymptotic matrix is singular on the torus at theta = {theta:?}")]
    SingularOnTorus { theta: Vec<f64> },

    #[error("system is not strongly exponentially stable (robust spectral abscissa {alpha:.6})")]
    NotStronglyStable { alpha: f64 },

    #[error("LAPACK routine {routine} failed with info = {info}")]
    EigSolverFailure { routine: &'static str, info: i32 },

    #[error("discretization order must be at least 2, got {0}")]
    InvalidOrder(usize),

    #[error("parameter index {index} out of range for {count} parameters")]
    IndexOutOfRange { index: usize, count: usize },

    #[error("iteration failed to converge: {0}")]
    NonConvergence(String),

    #[error("objective is undefined at the starting point")]
    GuardViolatedAtStart,

    /// Stabilization terminated with every restart still in the unstable
    /// region; the best parameters and abscissa found are reported.
    #[error("no strongly stabilizing controller found (best robust abscissa {alpha:.6})")]
    NoStabilizingControllerFound { alpha: f64, best: Vec<f64> },
}

pub type Result<T> = std::result::Result<T, Error>;
