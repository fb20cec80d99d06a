use std::path::PathBuf;

use thiserror::Error;

/// Failures while decoding or encoding subject bundles, banks and result files.
#[derive(Debug, Error)]
pub enum FormatError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed header {path}: {reason}")]
    MalformedHeader { path: PathBuf, reason: String },
    #[error("truncated payload {path}: expected {expected} bytes, found {found}")]
    Truncated {
        path: PathBuf,
        expected: usize,
        found: usize,
    },
    #[error("checksum mismatch in {path}: header says {expected:08x}, payload is {found:08x}")]
    Checksum {
        path: PathBuf,
        expected: u32,
        found: u32,
    },
    #[error("unsupported format version {found} in {path} (supported: {supported})")]
    UnsupportedVersion {
        path: PathBuf,
        found: u64,
        supported: u32,
    },
    #[error("invalid content in {path}: {reason}")]
    InvalidContent { path: PathBuf, reason: String },
}

impl FormatError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        FormatError::Io {
            path: path.into(),
            source,
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("resolution error: {0}")]
    Resolution(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("empty region: {0}")]
    EmptyRegion(String),
    #[error("registration failed: {0}")]
    Registration(String),
    #[error("segmentation failed: {0}")]
    Segmentation(String),
    #[error(transparent)]
    Format(#[from] FormatError),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
