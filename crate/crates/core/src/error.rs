use thiserror::Error;

/// Errors produced by the detection library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("corrupt data at byte offset {offset}: {reason}")]
    Corrupt { offset: u64, reason: String },

    #[error("dimension mismatch: expected {expected_width}x{expected_height}, got {width}x{height}")]
    DimensionMismatch {
        expected_width: usize,
        expected_height: usize,
        width: usize,
        height: usize,
    },

    #[error("degenerate clustering: all points are identical")]
    DegenerateClustering,

    #[error("indistinguishable states: both centroids have the same norm")]
    IndistinguishableStates,

    #[error("untrackable candidates: no candidate region yields corners")]
    UntrackableCandidates,

    #[error("no motion found in training video")]
    NoMotion,

    #[error("class imbalance: on/off ratio {ratio} outside [0.2, 5]")]
    Imbalanced { ratio: f64 },

    #[error("single class in training data")]
    SingleClass,

    #[error("solver did not converge after {iterations} iterations (objective {objective})")]
    NoConvergence { iterations: usize, objective: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidArgument(msg.into()))
}
