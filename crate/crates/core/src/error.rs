use thiserror::Error;

#[derive(Debug, Error)]
pub enum VmcError {
    #[error("invalid range: {0}")]
    InvalidRange(String),

    #[error("timestep {t} outside 1..={max}")]
    TimestepOutOfRange { t: usize, max: usize },

    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: String, got: String },

    #[error("unknown category `{value}` for {field}")]
    UnknownCategory { field: &'static str, value: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("empty corpus")]
    EmptyCorpus,

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("hash mismatch for {what}: expected {expected}, found {found}")]
    HashMismatch {
        what: String,
        expected: String,
        found: String,
    },

    #[error("trajectory leaves the frame: {0}")]
    OutOfBounds(String),

    #[error("metric prerequisite failed: {0}")]
    MetricPrerequisite(String),

    #[error("prompt is not appearance-invariant: {0}")]
    NotInvariant(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, VmcError>;

impl VmcError {
    pub(crate) fn shape(expected: impl ToString, got: impl ToString) -> Self {
        VmcError::ShapeMismatch {
            expected: expected.to_string(),
            got: got.to_string(),
        }
    }
}
