use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("png: {0}")]
    Png(String),

    #[error("bad magic: expected \"GWTC\", found {0:?}")]
    BadMagic([u8; 4]),

    #[error("unsupported container version {0} (expected 1)")]
    UnsupportedVersion(u32),

    #[error("truncated file: {0}")]
    Truncated(String),

    #[error("malformed container: {0}")]
    Malformed(String),

    #[error("manifest mismatch at `{name}`: {reason}")]
    Manifest { name: String, reason: String },

    #[error("cannot parse parameter name `{name}`: bad segment `{segment}`")]
    Grammar { name: String, segment: String },

    #[error("{0} is not a valid resolution band")]
    InvalidBand(u32),

    #[error("schedule error: {0}")]
    Schedule(String),

    #[error("config mismatch: {0}")]
    ConfigMismatch(String),

    #[error("unknown model id `{0}`")]
    NotFound(String),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn manifest(name: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Manifest {
            name: name.into(),
            reason: reason.into(),
        }
    }
}
