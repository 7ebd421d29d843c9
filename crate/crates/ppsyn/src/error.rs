//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("schema error: {0}")]
    Schema(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("row {row}, column \"{column}\": value \"{value}\" is not in the schema dictionary")]
    UnknownValue {
        row: usize,
        column: String,
        value: String,
    },

    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    #[error("clique mismatch: {0}")]
    CliqueMismatch(String),

    #[error("privacy budget overdraft: charge {charge} would push spent {spent} past total {total}")]
    Overdraft { charge: f64, spent: f64, total: f64 },

    #[error("budget must be positive")]
    BudgetNotPositive,

    #[error("domain has {cells} cells, exceeding the cap of {cap}")]
    DomainCapExceeded { cells: usize, cap: usize },

    #[error("no clique satisfies the cell-count limit {max_cells}")]
    WorkloadInfeasible { max_cells: usize },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
