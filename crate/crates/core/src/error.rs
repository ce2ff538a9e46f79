use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("{op}: dimension mismatch on {axis}: expected {expected}, found {found}")]
    Dimension {
        op: &'static str,
        axis: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("{op}: {msg}")]
    Shape { op: &'static str, msg: String },
    #[error("backward requires a scalar loss, got shape {shape:?}")]
    NonScalarLoss { shape: alloc::vec::Vec<usize> },
    #[error("non-finite loss value {0}")]
    NonFiniteLoss(f64),
    #[error("non-finite gradient produced at node {node} ({op})")]
    NonFiniteGradient { node: usize, op: &'static str },
    #[error("batch norm in train mode needs at least 2 rows per channel, got {0}")]
    BatchTooSmall(usize),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("no pair selected by the current thresholds")]
    NoSelectedPairs,
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("every batch of the epoch was skipped (no selected pairs)")]
    EpochFullySkipped,
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("unknown parameter {0}")]
    UnknownParameter(String),
}
