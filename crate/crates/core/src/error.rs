use std::path::PathBuf;

/// Errors produced anywhere in the toolkit.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("gimbal lock: |R[2][0]| = {0} is too close to 1")]
    GimbalLock(f64),

    #[error("DVL beam geometry is singular (condition number {0:e})")]
    SingularGeometry(f64),

    #[error("degenerate velocity window: singular values {0:?}")]
    DegenerateWindow([f64; 3]),

    #[error("series too short: {len} samples, window needs {window}")]
    TooShort { len: usize, window: usize },

    #[error("length mismatch: {0} labels vs {1} predictions")]
    LengthMismatch(usize, usize),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("training diverged at epoch {epoch}: loss = {loss}")]
    Diverged { epoch: usize, loss: f64 },

    #[error("corrupt dataset or checkpoint: {0}")]
    CorruptManifest(String),

    #[error("no trained model available for window of {0} samples")]
    MissingModel(usize),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("I/O error on {path}: {source}")]
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
}

pub type Result<T> = std::result::Result<T, Error>;
