use thiserror::Error;

use crate::dataset::TargetId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("unexpected header: expected `{expected}`, found `{found}`")]
    Header { expected: String, found: String },

    #[error("row {row}, column `{column}`: cannot parse `{value}`")]
    Parse {
        row: usize,
        column: String,
        value: String,
    },

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("division by zero: {0}")]
    DivisionByZero(&'static str),

    #[error("dimension mismatch: expected {expected} features, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("not enough data: {0}")]
    InsufficientData(String),

    #[error("target `{target}` has only {rows} measured rows, need at least {needed}")]
    TargetRows {
        target: TargetId,
        rows: usize,
        needed: usize,
    },

    #[error("row {0} is in every bootstrap sample; no out-of-bag trees")]
    NoOobTrees(usize),

    #[error("undefined: {0}")]
    Undefined(String),

    #[error("degenerate design matrix: {0}")]
    Degenerate(String),

    #[error("fold {fold} (record `{record}`): {source}")]
    Fold {
        fold: usize,
        record: String,
        #[source]
        source: Box<Error>,
    },
}
