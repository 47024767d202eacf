//! Library error type and its coarse categories.

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Broad failure class, used by the CLI to pick an exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Input,
    Numerical,
    Resource,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid lattice shape: {0}")]
    Shape(String),

    #[error("cell (region {region}, gene {gene}, time {time}) is out of range")]
    Index { region: usize, gene: usize, time: usize },

    #[error("cell (region {region}, gene {gene}, time {time}) is masked")]
    MaskedCell { region: usize, gene: usize, time: usize },

    #[error("degenerate data: {0}")]
    DegenerateData(String),

    #[error("mixture fit failed after {attempts} attempts: {reason}")]
    EmFailed { attempts: usize, reason: String },

    #[error("non-finite objective at parameters {params:?}")]
    NonFinite { params: Vec<f64> },

    #[error("zero pooled variance in two-sample t statistic")]
    ZeroVariance,

    #[error("{file}:{line}: field `{field}`: {message}")]
    Parse {
        file: PathBuf,
        line: u64,
        field: String,
        message: String,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("checkpoint rejected: {0}")]
    Checkpoint(String),

    #[error("run interrupted after iteration {0}")]
    Interrupted(usize),

    #[error("undefined ROC axis: truth has no {0}")]
    UndefinedRoc(&'static str),

    #[error("{}: {source}", path.display())]
    File { path: PathBuf, source: std::io::Error },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::DegenerateData(_)
            | Error::EmFailed { .. }
            | Error::NonFinite { .. }
            | Error::ZeroVariance
            | Error::UndefinedRoc(_) => ErrorCategory::Numerical,
            Error::Io(_) | Error::Interrupted(_) => ErrorCategory::Resource,
            _ => ErrorCategory::Input,
        }
    }
}
