use std::io;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("node ids are not dense: {0}")]
    NonDenseIds(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("budget exceeded: charge `{label}` needs ε={eps}, δ={delta} but only ε={eps_left}, δ={delta_left} remain")]
    BudgetExceeded {
        label: String,
        eps: f64,
        delta: f64,
        eps_left: f64,
        delta_left: f64,
    },

    #[error("brute-force oracle limited to {limit} nodes, graph has {nodes}")]
    OracleSize { nodes: usize, limit: usize },

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("LP solver failure: {0}")]
    Solver(String),

    #[error("metric undefined: {0}")]
    UndefinedMetric(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
