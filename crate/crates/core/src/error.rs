use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("manifest {path}, line {line}: {message}")]
    Manifest {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("pair count mismatch in bridge {bridge}: {x} younger samples, {y} older samples")]
    PairCountMismatch { bridge: usize, x: usize, y: usize },

    #[error("bridge {bridge} has no pairs")]
    EmptyBridge { bridge: usize },

    #[error("group {group} has no samples")]
    EmptyGroup { group: usize },

    #[error("malformed sample {path}: {message}")]
    Sample { path: PathBuf, message: String },

    #[error("non-finite value in {context}")]
    NonFinite { context: String },

    #[error("value {value} out of range in {context}")]
    OutOfRange { value: f64, context: String },

    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: String,
        expected: usize,
        found: usize,
    },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("group {group} out of range (valid: {valid})")]
    GroupOutOfRange { group: usize, valid: String },

    #[error("no spectrum: sample matrix is identically zero")]
    NoSpectrum,

    #[error("bad magic: expected \"ADLM\"")]
    BadMagic,

    #[error("unsupported model file version {found} (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("unexpected end of section {section}")]
    UnexpectedEnd { section: &'static str },

    #[error("section {section} has {count} trailing bytes")]
    TrailingBytes { section: &'static str, count: usize },

    #[error("constraint violation: {0}")]
    ConstraintViolation(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn dims(context: impl Into<String>, expected: usize, found: usize) -> Self {
        Error::DimensionMismatch {
            context: context.into(),
            expected,
            found,
        }
    }
}
