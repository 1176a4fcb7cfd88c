use std::path::PathBuf;

/// Errors produced by the detection library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("ocr engine `{engine}` failed on strip {strip}: {message}")]
    Engine {
        engine: String,
        strip: usize,
        message: String,
    },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("not found: {0}")]
    NotFound(String),

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("training diverged: {0}")]
    TrainingDiverged(String),

    #[error("tab {0} is paused while a warning is pending")]
    TabPaused(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("png: {0}")]
    Png(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
