use std::path::PathBuf;

/// Errors surfaced by the command-line runner.
#[derive(Debug, thiserror::Error)]
pub enum AppError {
    #[error("{0}")]
    Config(String),
    #[error("dataset not found: {}", .0.display())]
    DatasetNotFound(PathBuf),
    #[error("checkpoint load error (format version {version}): {reason}")]
    CheckpointLoad { version: u32, reason: String },
    #[error("dataset cache load error (format version {version}): {reason}")]
    DatasetLoad { version: u32, reason: String },
    #[error(transparent)]
    Core(#[from] disentangle_core::Error),
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
    #[error("image error: {0}")]
    Image(#[from] image::ImageError),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = AppError> = std::result::Result<T, E>;

impl AppError {
    /// 0 success, 1 user/config error, 2 runtime or numeric abort.
    pub fn exit_code(&self) -> u8 {
        match self {
            AppError::Config(_)
            | AppError::DatasetNotFound(_)
            | AppError::CheckpointLoad { .. }
            | AppError::DatasetLoad { .. } => 1,
            AppError::Core(disentangle_core::Error::NonFinite(_)) => 2,
            AppError::Core(_) => 1,
            AppError::Io { .. } | AppError::Image(_) | AppError::Csv(_) => 2,
        }
    }

    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        AppError::Io { context: context.into(), source }
    }
}
