use thiserror::Error;

/// Errors raised by the compression engine, the PDE solvers and the optimizers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("weight matrix is not symmetric (relative defect {defect:.3e})")]
    WeightNotSymmetric { defect: f64 },

    #[error("weight matrix is not positive definite")]
    WeightNotSpd,

    #[error("core SVD of a zero matrix is undefined")]
    ZeroMatrix,

    #[error("first snapshot has zero weighted norm")]
    ZeroSnapshot,

    #[error("non-finite entry in {0}")]
    NonFinite(&'static str),

    #[error("reorthogonalization did not converge after {passes} passes (defect {defect:.3e})")]
    NumericalDegradation { passes: usize, defect: f64 },

    #[error("state must be finalized before {0}")]
    NotFinalized(&'static str),

    #[error("snapshot index {index} out of range 1..={count}")]
    IndexOutOfRange { index: usize, count: usize },

    #[error("empty stream")]
    EmptyStream,

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("mesh size h = {h} does not align with the interface at x = 1")]
    MisalignedMesh { h: f64 },

    #[error("singular linear system")]
    SingularSystem,

    #[error("Newton iteration failed at step {step}: residual {residual:.3e} after {iterations} iterations")]
    NewtonFailure {
        step: usize,
        iterations: usize,
        residual: f64,
    },

    /// `trace` holds the objective values recorded up to the failure.
    #[error("iteration diverged at step {iteration}: objective {objective}")]
    Divergence {
        iteration: usize,
        objective: f64,
        trace: Vec<f64>,
    },

    #[error("step size {kappa} is outside (0, 1/L) with L = {lipschitz}")]
    StepSizeDomain { kappa: f64, lipschitz: f64 },

    #[error("container format: {0}")]
    Format(String),

    #[error("matrix market: {0}")]
    MatrixMarket(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
