use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("circuit {circuit_id} does not fit device {device_id}: {reason}")]
    DeviceMismatch {
        circuit_id: String,
        device_id: String,
        reason: String,
    },
    #[error("missing schedule cells: {}", .0.join(", "))]
    MissingCells(Vec<String>),
    #[error("layout mismatch: {0}")]
    LayoutMismatch(String),
    #[error("invalid embedding: {0}")]
    InvalidEmbedding(String),
    #[error("degenerate data: {0}")]
    Degenerate(String),
    #[error("training diverged: {0}")]
    Diverged(String),
    #[error("missing artifacts: {}", .0.join(", "))]
    MissingArtifacts(Vec<String>),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error("{0}")]
    Parse(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
