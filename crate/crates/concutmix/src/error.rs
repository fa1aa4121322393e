//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("class id {class} out of range for {num_classes} classes")]
    ClassOutOfRange { class: usize, num_classes: usize },

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("class {class} has no samples")]
    EmptyClass { class: usize },

    #[error(
        "imbalance factor {imbalance_factor} would force a class below one sample \
         (head class has {head_count})"
    )]
    ImbalanceTooLarge { imbalance_factor: f64, head_count: usize },

    #[error("source dataset is not balanced: class {class} has {count} samples, expected {expected}")]
    UnbalancedSource { class: usize, count: usize, expected: usize },

    #[error("degenerate contrastive batch: every anchor has an empty positive set")]
    DegenerateBatch,

    #[error("non-finite loss at epoch {epoch}, step {step}: {value}")]
    NonFiniteLoss { epoch: usize, step: usize, value: f64 },

    #[error("invalid data file: {0}")]
    InvalidFormat(String),

    #[error("checkpoint dimension mismatch: {0}")]
    CheckpointMismatch(String),

    #[error("experiment error: {0}")]
    Experiment(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}
