use thiserror::Error;

/// Errors raised across the library.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("operator is not symmetric (max asymmetry {asymmetry:.3e})")]
    NotSymmetric { asymmetry: f64 },

    #[error("operator is not positive definite (pivot {pivot:.3e} at index {index})")]
    NotPositiveDefinite { index: usize, pivot: f64 },

    #[error("dense operator of dimension {dim} exceeds the dense cap {cap}")]
    DenseTooLarge { dim: usize, cap: usize },

    #[error("iteration did not converge: {0}")]
    ConvergenceFailure(String),

    #[error("singular operator: {0}")]
    Singular(String),

    #[error("AR(1) process is not convergent (spectral radius {spectral_radius:.6})")]
    NotConvergent { spectral_radius: f64 },

    #[error("G·Σ is not symmetric (asymmetry {asymmetry:.3e}); use the general conversion")]
    NotSymmetrizable { asymmetry: f64 },

    #[error("step too large: h·λ_max = {h_lambda_max:.6} ≥ 4")]
    StepTooLarge { h_lambda_max: f64 },

    #[error("leapfrog unstable: h²·λ_max = {h2_lambda_max:.6} ≥ 4")]
    Unstable { h2_lambda_max: f64 },

    #[error("splitting is not symmetric; use the generic acceptance path")]
    NotSymmetricSplitting,

    #[error("splitting does not commute with the target precision (commutator {commutator:.3e})")]
    NotSimultaneouslyDiagonalizable { commutator: f64 },

    #[error("negative radicand in mode {mode}")]
    NegativeRadicand { mode: usize },

    #[error("log-density evaluation failed: {0}")]
    EvaluationFailure(String),

    #[error("unknown direction: {0}")]
    UnknownDirection(String),

    #[error("trace too short: {len} < {min}")]
    TraceTooShort { len: usize, min: usize },

    #[error("degenerate (zero) variance")]
    DegenerateVariance,

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
