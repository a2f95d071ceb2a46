use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("state error: {0}")]
    State(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("optimizer error: {0}")]
    Optimizer(String),

    #[error("label error: {0}")]
    Label(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("ingest error: {0}")]
    Ingest(String),

    #[error("crop error: {0}")]
    Crop(String),

    #[error("split error: {0}")]
    Split(String),

    #[error("balance error: {0}")]
    Balance(String),

    #[error("metric error: {0}")]
    Metric(String),

    #[error("load error: {0}")]
    Load(String),

    #[error("format error in {section}: {detail}")]
    Format { section: String, detail: String },

    #[error("parse error at line {line}: {detail}")]
    Parse { line: usize, detail: String },

    #[error("image error in {path}: {detail}")]
    Image { path: PathBuf, detail: String },

    #[error("training aborted at epoch {epoch}, batch {batch}: {detail}")]
    TrainingAborted { epoch: usize, batch: usize, detail: String },

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
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(section: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Format {
            section: section.into(),
            detail: detail.into(),
        }
    }
}
