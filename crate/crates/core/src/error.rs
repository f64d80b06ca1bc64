use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("insufficient training points: need at least {needed}, got {got}")]
    InsufficientTrainingPoints { needed: usize, got: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("duplicate ids rejected: {0:?}")]
    DuplicateIds(Vec<u64>),

    #[error("unknown id {0}")]
    UnknownId(u64),

    #[error("residual encoding unsupported for {0}")]
    ResidualUnsupported(&'static str),

    #[error("version {version} out of range for cell {cell} (live versions {base}..{end})")]
    VersionOutOfRange {
        cell: usize,
        version: u16,
        base: u16,
        end: u32,
    },

    #[error("vector source unavailable: {0}")]
    SourceUnavailable(String),

    #[error("insufficient vectors to split: {vectors} vectors for {cells} cells")]
    InsufficientSplitVectors { vectors: usize, cells: usize },

    #[error("malformed file {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }

    /// True for errors caused by bad user configuration rather than bad data.
    pub fn is_config_error(&self) -> bool {
        matches!(
            self,
            Error::InvalidConfig(_) | Error::ResidualUnsupported(_) | Error::Json(_)
        )
    }
}
