use thiserror::Error;

/// Errors produced by the simulators, the surrogate and the file codecs.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("shape mismatch: expected {expected}, got {actual}")]
    ShapeMismatch { expected: usize, actual: usize },

    #[error("linear solver did not converge after {iterations} iterations (relative residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("eigensolver failed: {0}")]
    Eigen(String),

    #[error("saturation {value} left [0, 1] in cell {cell}; time step violates the CFL bound")]
    CflViolation { cell: usize, value: f64 },

    #[error("time stepping exceeded the cap of {0} steps")]
    StepCapExceeded(usize),

    #[error("trace is incomplete: {0}")]
    IncompleteTrace(String),

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("checkpoint incompatible: {0}")]
    Checkpoint(String),

    #[error("decode error: {0}")]
    Decode(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("sample with seed {seed:#x} failed: {source}")]
    Sample {
        seed: u64,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
