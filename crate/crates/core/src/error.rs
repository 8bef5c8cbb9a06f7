use std::io;

use thiserror::Error;

/// Coarse error class, used by front ends to pick an exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    /// Bad input data, shapes, files or configuration.
    Data,
    /// A numerical routine failed (factorization, convergence, ...).
    Numerical,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty input: {0}")]
    EmptyInput(&'static str),
    #[error("invalid domain: {0}")]
    InvalidDomain(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("shape mismatch: expected {expected}, got {got}")]
    Shape { expected: usize, got: usize },
    #[error("grid mismatch between fields")]
    GridMismatch,
    #[error("invalid rank k={k}, must lie in 1..={max}")]
    InvalidRank { k: usize, max: usize },
    #[error("ill-posed data: {0}")]
    IllPosed(String),
    #[error("correlation matrix not positive definite after nugget escalation to {nugget:e}")]
    Conditioning { nugget: f64 },
    #[error("nested design violated: {0}")]
    NestedDesign(String),
    #[error("size error: {0}")]
    Size(String),
    #[error("design out of bounds: {0}")]
    OutOfBounds(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("invalid start point: {0}")]
    InvalidStart(String),
    #[error("no feasible start found: {0}")]
    InfeasibleStart(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("format error: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Conditioning { .. } | Error::Numerical(_) => ErrorClass::Numerical,
            _ => ErrorClass::Data,
        }
    }

    /// Short machine-readable tag for the variant.
    pub fn code(&self) -> &'static str {
        match self {
            Error::EmptyInput(_) => "empty_input",
            Error::InvalidDomain(_) => "invalid_domain",
            Error::InvalidInput(_) => "invalid_input",
            Error::Shape { .. } => "shape",
            Error::GridMismatch => "grid_mismatch",
            Error::InvalidRank { .. } => "invalid_rank",
            Error::IllPosed(_) => "ill_posed",
            Error::Conditioning { .. } => "conditioning",
            Error::NestedDesign(_) => "nested_design",
            Error::Size(_) => "size",
            Error::OutOfBounds(_) => "out_of_bounds",
            Error::Config(_) => "config",
            Error::InvalidStart(_) => "invalid_start",
            Error::InfeasibleStart(_) => "infeasible_start",
            Error::Numerical(_) => "numerical",
            Error::Format(_) => "format",
            Error::Io(_) => "io",
            Error::Csv(_) => "csv",
            Error::Json(_) => "json",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
