use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the distrust pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("table is empty")]
    EmptyTable,
    #[error("target column `{0}` not found in header")]
    MissingTargetColumn(String),
    #[error("row {row} has {found} fields, header has {expected}")]
    RaggedRow {
        row: usize,
        expected: usize,
        found: usize,
    },
    #[error("missing value in column `{column}` at row {row}")]
    MissingValue { column: String, row: usize },
    #[error("value `{value}` in ordinal column `{column}` is not a number")]
    NotNumeric { column: String, value: String },
    #[error("unseen category `{category}` in column `{column}`")]
    UnseenCategory { column: String, category: String },
    #[error("column `{0}` is required by the schema but missing from the input")]
    MissingColumn(String),
    #[error("dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("k = {k} out of range (valid: 1..={max})")]
    KOutOfRange { k: usize, max: usize },
    #[error("invalid parameter: {0}")]
    InvalidParams(String),
    #[error("degenerate statistic: {0}")]
    Degenerate(String),
    #[error("length mismatch: {0}")]
    LengthMismatch(String),
    #[error("model format version {found} not supported (expected {expected})")]
    VersionMismatch { expected: u32, found: u32 },
    #[error("model file is corrupt: {0}")]
    Integrity(String),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
