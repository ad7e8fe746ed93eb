use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{0}")]
    DataFormat(String),

    #[error("unknown sample id `{0}`")]
    Lookup(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("dimension mismatch at layer {layer}: {detail}")]
    Dimension { layer: usize, detail: String },

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("missing forward cache at layer {0}")]
    State(usize),

    #[error("training failed: {0}")]
    Training(String),

    #[error("boosting failed: {0}")]
    Boosting(String),

    #[error("cannot balance class `{class}`: {detail}")]
    Balancing { class: String, detail: String },

    #[error("index {index} out of range for {len} classes")]
    Index { index: usize, len: usize },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn data(msg: impl Into<String>) -> Self {
        Error::DataFormat(msg.into())
    }

    pub fn precondition(msg: impl Into<String>) -> Self {
        Error::Precondition(msg.into())
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::DataFormat(_) | Error::Serde(_) | Error::Lookup(_) => 2,
            Error::Io { .. } => 4,
            Error::Precondition(_)
            | Error::Dimension { .. }
            | Error::Numeric(_)
            | Error::State(_)
            | Error::Training(_)
            | Error::Boosting(_)
            | Error::Balancing { .. }
            | Error::Index { .. } => 3,
        }
    }
}
