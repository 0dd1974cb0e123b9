//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("file not found: {0}")]
    FileNotFound(String),

    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),

    #[error("parse error at row {row}, column {column}: {detail}")]
    ParseError {
        row: usize,
        column: String,
        detail: String,
    },

    #[error("unknown attribute: {0}")]
    UnknownAttribute(String),

    #[error("attribute {0} is not categorical")]
    NonCategoricalAttribute(String),

    #[error("column {0} has no observed values")]
    EmptyColumn(String),

    #[error("dataset has no cells")]
    EmptyDataset,

    #[error("combination space has {combinations} cells, exceeding the cap of {cap}")]
    SpaceTooLarge { combinations: u128, cap: u128 },

    #[error("group {0} matches no usable rows")]
    EmptyGroup(String),

    #[error("no prediction column declared in the profile")]
    MissingPredictionColumn,

    #[error("need at least two defined group ratios")]
    InsufficientGroups,

    #[error("no rows remain after excluding rows with missing cells")]
    NoCompleteRows,

    #[error("outcome column {0} is not a binary label")]
    OutcomeNotBinary(String),

    #[error("target column contains a single class")]
    SingleClassTarget,

    #[error("invalid split: {0}")]
    InvalidSplit(String),

    #[error("sample too small: need at least {needed}, got {got}")]
    SampleTooSmall { needed: usize, got: usize },

    #[error("non-finite value in sample for {0}")]
    NonFiniteValue(String),

    #[error("degenerate support: fewer than two categories to compare")]
    DegenerateSupport,

    #[error("empty (group, label) cell: group {group}, label {label}")]
    EmptyCell { group: String, label: String },

    #[error("attribute {0} has no observed donor values")]
    AllMissingAttribute(String),

    #[error("not enough complete donor rows: need {needed}, got {got}")]
    InsufficientDonors { needed: usize, got: usize },

    #[error("invalid fold count {k} for {n_rows} rows")]
    InvalidK { k: usize, n_rows: usize },

    #[error("dataset too small: need at least {needed} rows, got {got}")]
    DatasetTooSmall { needed: usize, got: usize },

    #[error("invalid spec: {0}")]
    InvalidSpec(String),

    #[error("profile does not match dataset: {0}")]
    ProfileMismatch(String),

    #[error("invalid mitigation plan: {0}")]
    InvalidPlan(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}
