use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = SoupError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum SoupError {
    #[error("dimension mismatch for {what}: expected {expected}, got {actual}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("invalid architecture: {0}")]
    InvalidArch(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("non-finite training loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("bad magic in {path}: expected {expected:?}, found {found:?}")]
    BadMagic {
        path: PathBuf,
        expected: String,
        found: String,
    },

    #[error("architecture hash mismatch: expected {expected:016x}, found {found:016x}")]
    ArchHashMismatch { expected: u64, found: u64 },

    #[error("truncated file {path}: expected {expected} bytes, found {actual}")]
    Truncated {
        path: PathBuf,
        expected: u64,
        actual: u64,
    },

    #[error("malformed manifest: {0}")]
    Manifest(String),

    #[error("checksum mismatch for {what}: expected {expected}, found {found}")]
    ChecksumMismatch {
        what: String,
        expected: String,
        found: String,
    },

    #[error("budget exhausted: {allowed} evaluation(s) allowed")]
    BudgetExhausted { allowed: usize },

    #[error(
        "requested {requested} candidates but only {available} distinct masks of size 2..={max_size} exist"
    )]
    TooManyCandidates {
        requested: usize,
        available: u128,
        max_size: usize,
    },

    #[error("statistic undefined: {0}")]
    Undefined(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("missing prerequisite artifact {path}: {hint}")]
    MissingArtifact { path: PathBuf, hint: String },

    #[error("serialization error: {0}")]
    Serde(String),
}

impl SoupError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        SoupError::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            SoupError::Config(_) => 2,
            SoupError::MissingArtifact { .. }
            | SoupError::ChecksumMismatch { .. }
            | SoupError::BadMagic { .. }
            | SoupError::Truncated { .. }
            | SoupError::ArchHashMismatch { .. }
            | SoupError::Manifest(_) => 3,
            SoupError::NonFinite(_) | SoupError::NonFiniteLoss { .. } => 4,
            _ => 1,
        }
    }
}
