use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration or parameter combination.
    #[error("configuration error: {0}")]
    Config(String),

    /// Shape mismatch between fields, meshes, or datasets.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// Linear or staggered solver did not reach its tolerance.
    #[error("solver failure: {0}")]
    Solver(String),

    /// Eigensolver or local weight system failure.
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// On-disk format problems (see `io` for the specific variants).
    #[error(transparent)]
    Storage(#[from] StorageError),
}

/// Errors raised by the dataset/manifold persistence layer.
#[derive(Debug, Error)]
pub enum StorageError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("unrecognized format version {found} (supported: {supported})")]
    VersionMismatch { found: u32, supported: u32 },

    #[error("checksum mismatch in {file}: manifest says {expected:#010x}, file has {actual:#010x}")]
    ChecksumMismatch {
        file: String,
        expected: u32,
        actual: u32,
    },

    #[error("truncated or oversized array file {file}: expected {expected} bytes, found {actual}")]
    Truncated {
        file: String,
        expected: u64,
        actual: u64,
    },

    #[error("malformed manifest or stream: {0}")]
    Format(String),

    #[error("invariant violated on load: {0}")]
    Invariant(String),
}

impl StorageError {
    pub fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        StorageError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
