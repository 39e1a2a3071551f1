use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid segment [{start}, {end}]: need 0 <= start <= end <= 1")]
    InvalidSegment { start: f64, end: f64 },

    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("ground-truth segment has zero length")]
    ZeroLengthGroundTruth,

    #[error("no ground truth present in any video")]
    EmptyGroundTruth,

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("planted segments do not fit without overlap: {0}")]
    SegmentsDoNotFit(String),

    #[error("malformed dataset record at line {line}: {reason}")]
    Dataset { line: usize, reason: String },

    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),

    #[error("training diverged at epoch {epoch}: {reason}")]
    Diverged { epoch: usize, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
