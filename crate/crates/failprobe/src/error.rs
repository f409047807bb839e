use std::path::{Path, PathBuf};

/// Errors from reading or writing the on-disk formats.
#[derive(Debug, thiserror::Error)]
pub enum FileError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}{}: {message}", path.display(), step.map(|s| format!(" step {s}")).unwrap_or_default())]
    Schema {
        path: PathBuf,
        step: Option<usize>,
        message: String,
    },
    #[error("{}: no rollout files found", .0.display())]
    EmptyDataset(PathBuf),
    #[error("duplicate rollout id `{rollout_id}` in {} and {}", first.display(), second.display())]
    DuplicateRollout {
        rollout_id: String,
        first: PathBuf,
        second: PathBuf,
    },
    #[error("incompatible model/dataset dims: model expects {expected}, rollout `{rollout_id}` gives {got}")]
    IncompatibleDims {
        expected: usize,
        got: usize,
        rollout_id: String,
    },
    #[error(transparent)]
    Core(#[from] failprobe_core::Error),
}

impl FileError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        FileError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub(crate) fn schema(path: &Path, step: Option<usize>, message: impl Into<String>) -> Self {
        FileError::Schema {
            path: path.to_path_buf(),
            step,
            message: message.into(),
        }
    }

    /// Short machine-readable category.
    pub fn kind(&self) -> &'static str {
        match self {
            FileError::Io { .. } => "io",
            FileError::Schema { .. } => "schema",
            FileError::EmptyDataset(_) => "empty_dataset",
            FileError::DuplicateRollout { .. } => "duplicate_rollout",
            FileError::IncompatibleDims { .. } => "incompatible_dims",
            FileError::Core(e) => core_kind(e),
        }
    }
}

/// Short machine-readable category of a core error.
pub fn core_kind(e: &failprobe_core::Error) -> &'static str {
    use failprobe_core::Error as E;
    match e {
        E::Empty(_) => "empty",
        E::DimensionMismatch { .. } => "dimension_mismatch",
        E::InvalidArgument(_) => "invalid_argument",
        E::InvalidData(_) => "invalid_data",
        E::MissingField { .. } => "missing_field",
        E::SingleClass(_) => "single_class",
        E::TooFewTasks { .. } => "too_few_tasks",
        E::KTooLarge { .. } => "k_too_large",
        E::DegenerateCovariance => "degenerate_covariance",
        E::NonFiniteLoss { .. } => "non_finite_loss",
    }
}
