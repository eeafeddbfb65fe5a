use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error in {op}: {detail}")]
    Dimension { op: &'static str, detail: String },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("invalid config value for `{key}`: {msg}")]
    Config { key: String, msg: String },

    #[error("ingestion error: {0}")]
    Ingest(String),

    #[error("missing required column `{0}`")]
    MissingColumn(String),

    #[error("value out of range: {0}")]
    Range(String),

    #[error("split error: {0}")]
    Split(String),

    #[error("training diverged at epoch {epoch}: {detail}")]
    Diverged { epoch: usize, detail: String },

    #[error("undefined metric: {0}")]
    Undefined(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn dim(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Dimension {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn config(key: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            msg: msg.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
