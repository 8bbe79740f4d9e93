use std::path::PathBuf;

use crate::data::PatternId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("failed to read or write {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error in {path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error("{path}: row {row}: {message}")]
    Parse {
        path: PathBuf,
        row: usize,
        message: String,
    },
    #[error("response value missing at data row {row}")]
    MissingResponse { row: usize },
    #[error("column `{0}` not found")]
    UnknownColumn(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("at most 63 covariates are supported, got {0}")]
    TooManyColumns(usize),
    #[error("cannot fit a model to zero rows")]
    EmptyFit,
    #[error("design term references covariate {0}, which is missing in this record")]
    MissingCovariate(usize),
    #[error("residual variance undefined: {n_fit} rows for rank {rank}")]
    UndefinedVariance { n_fit: usize, rank: usize },
    #[error("column {0} has no observed values")]
    AllMissingColumn(usize),
    #[error("column {column}: {available} observed values, need at least {needed}")]
    InsufficientDonors {
        column: usize,
        available: usize,
        needed: usize,
    },
    #[error("conditional model for column {column} in pattern {pattern} has {available} usable rows, need at least 2")]
    InsufficientRows {
        column: usize,
        pattern: PatternId,
        available: usize,
    },
    #[error("{available} fully observed rows, need at least {needed}")]
    TooFewCompleteRows { available: usize, needed: usize },
    #[error("no usable submodel for pattern {0}")]
    NoSubmodel(PatternId),
    #[error("covariance matrix is not positive definite")]
    NotPositiveDefinite,
    #[error("calibration failed: {0}")]
    Calibration(String),
    #[error("mechanism {0} needs the response")]
    ResponseRequired(&'static str),
    #[error("mechanism {0} can only be simulated with the selection formulation")]
    SelectionOnly(&'static str),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}
