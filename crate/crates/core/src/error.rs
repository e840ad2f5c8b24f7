use std::path::PathBuf;

/// Errors surfaced by the pipeline. The CLI maps these onto exit codes:
/// config errors -> 2, input errors -> 3, numeric faults -> 4.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("config error: {0}")]
    Config(String),
    #[error("input error: {0}")]
    Input(String),
    #[error("numeric fault: {0}")]
    Numeric(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("tensor file error on {path}: {source}")]
    Octf {
        path: PathBuf,
        #[source]
        source: omnicast_tensor::octf::OctfError,
    },
    #[error("json error on {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub fn octf(path: impl Into<PathBuf>, source: omnicast_tensor::octf::OctfError) -> Self {
        Error::Octf { path: path.into(), source }
    }

    pub fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json { path: path.into(), source }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
