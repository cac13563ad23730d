use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] fmpq_core::Error),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("config {path}: {message}")]
    Config { path: PathBuf, message: String },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("{0}: not a checkpoint file")]
    BadMagic(PathBuf),
    #[error("checkpoint schema version {found}, expected {expected}")]
    SchemaVersion { found: u32, expected: u32 },
    #[error("checkpoint is truncated: {0}")]
    Truncated(String),
    #[error("checkpoint has unknown tensor `{0}`")]
    UnknownTensor(String),
    #[error("checkpoint is missing tensor `{0}`")]
    MissingTensor(String),
    #[error("checkpoint stores {found} tensors, {expected} requested")]
    DtypeMismatch { found: String, expected: String },
    #[error("invalid checkpoint: {0}")]
    InvalidCheckpoint(String),
    #[error("{0}: no decodable images")]
    EmptyDirectory(PathBuf),
    #[error("{dir}: need {need} images, found {found}")]
    TooFewImages { dir: PathBuf, need: usize, found: usize },
    #[error("{0}")]
    InvalidInput(String),
    #[error("search did not reach the target within {iterations} iterations (last CR {cr:.4})")]
    NonConvergence { iterations: usize, cr: f64 },
    #[error("training diverged at epoch {0}; last finite weights were kept")]
    Diverged(usize),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit status for this error.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::NonConvergence { .. } => 3,
            Error::Diverged(_) => 4,
            Error::Io { .. } | Error::Json(_) | Error::Csv(_) => 1,
            _ => 2,
        }
    }
}

/// Attach a path to an IO result.
pub(crate) trait IoContext<T> {
    fn at(self, path: &std::path::Path) -> Result<T>;
}

impl<T> IoContext<T> for std::io::Result<T> {
    fn at(self, path: &std::path::Path) -> Result<T> {
        self.map_err(|e| Error::io(path, e))
    }
}
