use std::path::PathBuf;

use thiserror::Error;

/// Errors surfaced by the margin risk engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: row {row}: {message}")]
    MalformedRow {
        path: String,
        row: usize,
        message: String,
    },

    #[error("{path}: row {row}: close must be positive, got {close}")]
    NonPositivePrice { path: String, row: usize, close: f64 },

    #[error("{path}: row {row}: duplicate date {date}")]
    DuplicateDate {
        path: String,
        row: usize,
        date: chrono::NaiveDate,
    },

    #[error("{path}: bad header, expected `date,close`")]
    BadHeader { path: String },

    #[error("no input: {0}")]
    NoInput(String),

    #[error("insufficient data: need {required} observations, have {available}")]
    InsufficientData { required: usize, available: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("oracle size guard exceeded: n={states}, T={horizon} (limits n<=64, T<=30)")]
    OracleTooLarge { states: usize, horizon: usize },

    #[error("empty indifference set")]
    EmptySet,

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad input rather than a broken internal invariant.
    pub fn is_input_error(&self) -> bool {
        !matches!(self, Error::Invariant(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
