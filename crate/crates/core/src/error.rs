use std::path::PathBuf;

use thiserror::Error;

/// Failures while reading or writing EMBC cache files.
#[derive(Debug, Error)]
pub enum CacheError {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: bad magic bytes (expected \"EMBC\")")]
    BadMagic { path: PathBuf },
    #[error("{path}: unsupported version {version}")]
    UnsupportedVersion { path: PathBuf, version: u32 },
    #[error("{path}: truncated header ({got} of {expected} bytes)")]
    TruncatedHeader {
        path: PathBuf,
        expected: usize,
        got: usize,
    },
    #[error("{path}: truncated payload ({got} of {expected} bytes)")]
    TruncatedPayload {
        path: PathBuf,
        expected: usize,
        got: usize,
    },
    #[error("{path}: non-finite value at flat offset {offset}")]
    NonFinite { path: PathBuf, offset: usize },
    #[error("{path}: invalid label {label} at row {row}")]
    InvalidLabel { path: PathBuf, row: usize, label: i64 },
    #[error("{path}: {reason}")]
    Malformed { path: PathBuf, reason: String },
    #[error("{what} = {value} does not fit the on-disk field")]
    Overflow { what: &'static str, value: u64 },
}

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Cache(#[from] CacheError),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("row {row} has zero norm and cannot be normalized")]
    ZeroNorm { row: usize },
    #[error("features must be l2-normalized")]
    NotNormalized,
    #[error("non-finite value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("MC dropout requires dropout (rate is 0)")]
    NoDropout,
    #[error("conformal calibrator has not been fitted")]
    Unfitted,
    #[error("cannot renormalize: probability mass inside support is {mass:e}")]
    Renormalize { mass: f64 },
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("output directory {0} is not empty (use --force to overwrite)")]
    OutputNotEmpty(PathBuf),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
