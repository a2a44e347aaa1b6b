//! Error type shared by every module of the crate.

use thiserror::Error;

/// Errors produced by the solver, the compactness toolkit and the CLI.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("negative time t = {0}")]
    NegativeTime(f64),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("operation requires a nonempty point cloud")]
    EmptyCloud,

    #[error("mixed norms inside one point cloud")]
    MixedNorms,

    #[error("degenerate sampling: every sample vector is zero")]
    DegenerateSampling,

    #[error("control norm {norm} exceeds certificate radius {radius} (p = {p})")]
    RadiusExceeded { norm: f64, radius: f64, p: f64 },

    #[error("certification failed: {0}")]
    Certification(String),

    #[error(
        "Picard iteration did not reach tolerance after {iterations} iterations (bound {bound:e})"
    )]
    NotConverged { iterations: usize, bound: f64 },

    #[error("iterate gap {gap:e} exceeds the factorial bound {bound:e} at k = {k}")]
    BoundViolated { k: usize, gap: f64, bound: f64 },

    #[error("coverage verification failed: {0}")]
    Coverage(String),

    #[error("verification failed: {0}")]
    Verification(String),

    #[error("point cloud budget of {budget} exceeded ({size} points) with subsampling disabled")]
    BudgetExceeded { budget: usize, size: usize },

    #[error("solve of control #{index} failed: {source}")]
    Batch {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}

impl Error {
    /// Process exit code of the command-line front end: 2 for bad input, 3
    /// for numeric or certification failures, 4 for failed verifications.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Batch { source, .. } => source.exit_code(),
            Error::Certification(_)
            | Error::NotConverged { .. }
            | Error::BoundViolated { .. }
            | Error::DegenerateSampling
            | Error::BudgetExceeded { .. } => 3,
            Error::Coverage(_) | Error::Verification(_) => 4,
            _ => 2,
        }
    }
}
