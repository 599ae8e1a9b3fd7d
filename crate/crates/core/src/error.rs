use thiserror::Error;

/// Errors raised by the tensor engine, network assembly, and I/O layers.
#[derive(Debug, Error)]
pub enum MewError {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("{op}: channel count {channels} is not divisible by {parts}")]
    Indivisible {
        op: &'static str,
        channels: usize,
        parts: usize,
    },

    #[error("{op}: expected rank {expected}, got shape {shape:?}")]
    Rank {
        op: &'static str,
        expected: usize,
        shape: Vec<usize>,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("loss must be a scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("PGM parse error at byte {offset}: {message}")]
    Pgm { offset: usize, message: String },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("config: {0}")]
    Config(String),

    #[error("dataset: {0}")]
    Dataset(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, MewError>;

pub(crate) fn invalid(msg: impl Into<String>) -> MewError {
    MewError::InvalidArgument(msg.into())
}
