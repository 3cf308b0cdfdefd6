use thiserror::Error;

use crate::variables::VariableId;

#[derive(Debug, Error)]
pub enum Error {
    #[error("variable {variable} has a constant column (norm {norm:e} after centering)")]
    ConstantColumn { variable: VariableId, norm: f64 },

    #[error("variable {variable} refers to column {index} but the design has {p} columns")]
    InvalidVariable {
        variable: VariableId,
        index: usize,
        p: usize,
    },

    #[error("invalid variable: {0}")]
    MalformedVariable(String),

    #[error("invalid design: {0}")]
    InvalidDesign(String),

    #[error("invalid lambda grid: {0}")]
    InvalidGrid(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("column {0:?} not found in header")]
    MissingColumn(String),

    #[error("coordinate descent did not converge at lambda={lambda:e} after {iterations} cycles (last change {last_change:e})")]
    NoConvergence {
        lambda: f64,
        iterations: usize,
        last_change: f64,
        /// Best iterate reached, as (column index, coefficient) pairs.
        best: Vec<(usize, f64)>,
    },

    #[error("matrix is rank deficient (pivot {pivot:e} below tolerance {tolerance:e})")]
    RankDeficient { pivot: f64, tolerance: f64 },

    #[error("noise realization violates the conditioning event: {0}")]
    EventNotSatisfied(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
