use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

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

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("invalid schema: {0}")]
    Schema(String),

    #[error("required column '{column}' is missing from the header")]
    MissingColumn { column: String },

    #[error("line {line}: {reason}")]
    RowRejected {
        line: u64,
        reason: crate::ingest::RejectReason,
    },

    #[error("unknown dimension '{name}' (available: {})", available.join(", "))]
    UnknownDimension { name: String, available: Vec<String> },

    #[error("value '{value}' does not occur in dimension '{dimension}'")]
    UnknownValue { dimension: String, value: String },

    #[error(
        "base year {year} is not a column of the matrix (available years: {})",
        fmt_years(available)
    )]
    BaseYearMissing { year: i32, available: Vec<i32> },

    #[error("mean cost is undefined for empty cell ({label}, {year})")]
    EmptyMeanCell { label: String, year: i32 },

    #[error("need at least {required} rows, found {rows}")]
    InsufficientRows { rows: usize, required: usize },

    #[error("non-finite value at row {row}, column {column}")]
    NonFinite { row: usize, column: usize },

    #[error("dimension mismatch: expected {expected} values, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("invalid configuration: {field}: {message}")]
    InvalidConfig { field: String, message: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::InvalidConfig {
            field: field.into(),
            message: message.into(),
        }
    }
}

fn fmt_years(years: &[i32]) -> String {
    years.iter().map(|y| y.to_string()).collect::<Vec<_>>().join(", ")
}
