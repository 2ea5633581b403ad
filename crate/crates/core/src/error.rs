use thiserror::Error;

/// Errors raised by the simulator.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("matrix is not Hermitian (max deviation {0:.3e})")]
    NotHermitian(f64),

    #[error("matrix is not unitary (max deviation {0:.3e})")]
    NotUnitary(f64),

    #[error("state is not normalized (norm {0:.15})")]
    NotNormalized(f64),

    #[error("eigensolver failed to converge")]
    NoConvergence,

    #[error("degenerate ground state at s = {s} (gap {gap:.3e})")]
    DegenerateGround { s: f64, gap: f64 },

    #[error("invalid projector set: {0}")]
    InvalidProjectors(String),

    #[error("{name} = {value} is out of range ({expected})")]
    OutOfRange {
        name: &'static str,
        value: f64,
        expected: &'static str,
    },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("rejection sampling budget exhausted after {0} attempts")]
    RejectionBudget(usize),

    #[error("anchor estimation failed: {0}")]
    AnchorEstimation(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn out_of_range(name: &'static str, value: f64, expected: &'static str) -> Error {
    Error::OutOfRange {
        name,
        value,
        expected,
    }
}
