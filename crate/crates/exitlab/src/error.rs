use thiserror::Error;

/// Errors produced by model construction, trajectory integration, the PDE
/// solvers and the estimator suite.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    /// A state or weight became non-finite during integration. `step` is the
    /// index of the Euler-Maruyama step at which the blowup was detected.
    #[error("numerical blowup at step {step}: {detail}")]
    NumericalBlowup { step: u64, detail: String },

    #[error("point outside domain: {0}")]
    OutOfDomain(String),

    #[error("singular control evaluation: {0}")]
    Singularity(String),

    #[error("invalid covariate field: {0}")]
    InvalidCovariate(String),

    #[error("invalid field: {0}")]
    InvalidField(String),

    #[error("solver failure: {0}")]
    SolverFailure(String),

    #[error("configuration error: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn invalid_argument(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
