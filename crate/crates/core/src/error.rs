use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("unknown vm {0}")]
    UnknownVm(u32),

    #[error("unknown node {0}")]
    UnknownNode(crate::types::NodeAddr),

    #[error("source {src} out of range for sequencer with {n} inputs")]
    SourceOutOfRange { src: usize, n: usize },

    #[error("invalid order: {0}")]
    InvalidOrder(String),

    #[error("workload mismatch: {0}")]
    WorkloadMismatch(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed csv {path}: {msg}")]
    Csv { path: String, msg: String },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
