use thiserror::Error;

#[derive(Debug, Error)]
pub enum DegError {
    #[error("invalid frame: {0}")]
    InvalidFrame(String),

    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: String, got: String },

    #[error("invalid config field `{field}`: {reason}")]
    InvalidConfig { field: String, reason: String },

    #[error("zero-norm vector has no direction")]
    ZeroNorm,

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("batch length mismatch: {anchors} anchors vs {positives} positives")]
    BatchMismatch { anchors: usize, positives: usize },

    #[error("empty batch")]
    EmptyBatch,

    #[error("{0}")]
    InvalidArgument(String),

    #[error("parse error at byte {offset}: {reason}")]
    Parse { offset: usize, reason: String },

    #[error("unsupported {format} version {found} (expected {expected})")]
    UnsupportedVersion { format: &'static str, found: u32, expected: u32 },

    #[error("scripted expert failed: {0}")]
    ExpertFailure(String),

    #[error("replay buffer holds {have} transitions, need {need}")]
    Underfilled { have: usize, need: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl DegError {
    pub fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        DegError::InvalidConfig { field: field.into(), reason: reason.into() }
    }

    pub fn shape(expected: impl std::fmt::Debug, got: impl std::fmt::Debug) -> Self {
        DegError::ShapeMismatch { expected: format!("{expected:?}"), got: format!("{got:?}") }
    }
}

pub type Result<T, E = DegError> = std::result::Result<T, E>;
