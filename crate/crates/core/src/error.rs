//! Error type shared across the crate.

use std::path::PathBuf;
use thiserror::Error;

/// Crate-wide error enum. Variants map onto the CLI exit-code classes:
/// validation problems (`InvalidArgument`, `Validation`), I/O and file-format
/// problems (`Io`, `Format`, `UnsupportedDatatype`), and domain conditions
/// that make a result undefined rather than wrong (`UndefinedMetric`,
/// `UndefinedTest`, `NoOverlap`).
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("format error: {0}")]
    Format(String),

    #[error("unsupported NIfTI datatype code {0}")]
    UnsupportedDatatype(i16),

    #[error("no overlap: {0}")]
    NoOverlap(String),

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("undefined test: {0}")]
    UndefinedTest(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
