//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Input contains NaN or infinite values where finite data is required.
    #[error("non-finite value in {context}")]
    NonFinite { context: String },

    /// A parameter or configuration value violates its documented constraints.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// File does not start with the CINE magic bytes.
    #[error("{path}: bad magic (not a CINE file)")]
    BadMagic { path: String },

    /// CINE file declares an unsupported format version.
    #[error("{path}: unsupported CINE version {found} (expected {expected})")]
    VersionMismatch {
        path: String,
        found: u8,
        expected: u8,
    },

    /// File ends before the payload declared in its header.
    #[error("{path}: truncated payload (expected {expected} bytes, got {got})")]
    Truncated {
        path: String,
        expected: usize,
        got: usize,
    },

    /// CINE file declares an element type other than f32.
    #[error("{path}: unsupported dtype code {found}")]
    UnsupportedDtype { path: String, found: u8 },

    /// Malformed checkpoint file.
    #[error("bad checkpoint: {0}")]
    BadCheckpoint(String),

    /// Dataset is unusable for the requested operation (empty, single-class, ...).
    #[error("bad dataset: {0}")]
    BadDataset(String),

    /// Numerical failure during optimisation (non-finite gradients or loss).
    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("manifest: {0}")]
    Manifest(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    /// Process exit code for the CLI: 1 usage, 2 data, 3 numeric.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidArgument(_) => 1,
            Error::Numeric(_) => 3,
            _ => 2,
        }
    }
}
