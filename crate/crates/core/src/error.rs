use std::path::PathBuf;

/// Crate-wide error type. Each variant maps to one CLI exit code.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed tensor file: {0}")]
    Format(String),
    #[error("{0}")]
    Data(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("training diverged in stage `{stage}` at epoch {epoch} (non-finite values)")]
    Divergence { stage: String, epoch: usize },
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn in_stage(self, stage: &str) -> Self {
        match self {
            e @ (Error::Stage { .. } | Error::Divergence { .. }) => e,
            e => Error::Stage {
                stage: stage.into(),
                source: Box::new(e),
            },
        }
    }

    /// Process exit code: 2 config, 3 data, 4 divergence.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Io { .. } | Error::Format(_) | Error::Data(_) | Error::Json(_) => 3,
            Error::Divergence { .. } => 4,
            Error::Stage { source, .. } => source.exit_code(),
        }
    }
}
