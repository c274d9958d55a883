//! Crate-wide error type.

use std::path::PathBuf;

/// Errors produced by any stage of the pipeline.
///
/// Variants are grouped so the CLI can map them to exit codes:
/// configuration/schema problems exit with 2, runtime failures with 1.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Invalid configuration value or combination.
    #[error("config error: {0}")]
    Config(String),

    /// A field name that does not exist in the record schema.
    #[error("schema error: {0}")]
    Schema(String),

    /// Invalid parameter for an algorithm (e.g. k larger than the input).
    #[error("parameter error: {0}")]
    Parameter(String),

    /// Tessellation or geometry problem (bad ring, duplicate tile id, ...).
    #[error("geometry error: {0}")]
    Geometry(String),

    /// Fatal ingest condition (missing file, missing column, bad file).
    #[error("ingest error: {0}")]
    Ingest(String),

    /// A user-defined row transform failed.
    #[error("udf failed at partition {partition}, row {row}: {message}")]
    Udf {
        partition: usize,
        row: u64,
        message: String,
    },

    /// A partition exceeded the configured memory limits even after a split retry.
    #[error("partition {partition} exceeded memory limits ({rows} rows) and could not be split further")]
    OversizePartition { partition: usize, rows: u64 },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad configuration rather than runtime failure.
    pub fn is_config_error(&self) -> bool {
        matches!(
            self,
            Error::Config(_) | Error::Schema(_) | Error::Parameter(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
