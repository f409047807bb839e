use alloc::string::String;

/// Errors produced by the core library.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("invalid data: {0}")]
    InvalidData(String),
    #[error("rollout `{rollout_id}` step {step}: missing field `{field}`")]
    MissingField {
        field: &'static str,
        rollout_id: String,
        step: usize,
    },
    #[error("both classes are required: {0}")]
    SingleClass(&'static str),
    #[error("need more than {needed} tasks, found {found}")]
    TooFewTasks { needed: usize, found: usize },
    #[error("k = {k} exceeds reference set size {size}")]
    KTooLarge { k: usize, size: usize },
    #[error("covariance is singular after regularization")]
    DegenerateCovariance,
    #[error("non-finite loss {value} at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize, value: f64 },
}

pub type Result<T> = core::result::Result<T, Error>;
