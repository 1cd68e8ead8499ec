use std::path::PathBuf;

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// Not a NIfTI-1 file: wrong magic bytes or header size marker.
    #[error("{path}: not a NIfTI-1 file (bad magic or header size)")]
    BadMagic { path: PathBuf },

    #[error("{path}: unsupported datatype {dtype} (supported: uint8, int16, float32)")]
    UnsupportedDatatype { path: PathBuf, dtype: String },

    /// The stored orientation is more than spacing plus a translation.
    #[error("{path}: stored orientation is not a pure translation ({detail})")]
    UnsupportedOrientation { path: PathBuf, detail: String },

    #[error("{path}: truncated, need {expected} bytes but file has {actual}")]
    TruncatedData {
        path: PathBuf,
        expected: u64,
        actual: u64,
    },

    #[error("invalid volume header: {0}")]
    DimMismatch(String),

    #[error("unknown label code {0} (no entry in the code map)")]
    UnknownLabelCode(i64),

    #[error("volume geometry mismatch: {0}")]
    GeometryMismatch(String),

    #[error("non-finite value: {0}")]
    NonFiniteValue(String),

    #[error("pixel ({row}, {col}) outside the {rows}x{cols} detector")]
    IndexOutOfRange {
        row: usize,
        col: usize,
        rows: usize,
        cols: usize,
    },

    #[error("label volume contains no lung or infection voxels")]
    NoLungRegion,

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("dataset config lists no cases")]
    EmptyDataset,

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
