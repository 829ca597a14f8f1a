use thiserror::Error;

/// Errors produced by dataset handling, model fitting and the selection engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    /// Cell-level parse failure with its location in the input file.
    #[error("parse error at row {row}, column {column}: {message}")]
    Parse {
        row: usize,
        column: String,
        message: String,
    },

    /// An input violated a documented precondition.
    #[error("validation error: {0}")]
    Validation(String),

    /// The inputs are formally valid but too thin to work with
    /// (e.g. complete-case analysis leaving fewer rows than the selector needs).
    #[error("degenerate input: {0}")]
    Degenerate(String),

    /// A linear-algebra step failed (singular system, non-PSD matrix, ...).
    #[error("numerical error: {0}")]
    Numerical(String),
}

impl Error {
    pub fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub fn degenerate(msg: impl Into<String>) -> Self {
        Error::Degenerate(msg.into())
    }

    pub fn numerical(msg: impl Into<String>) -> Self {
        Error::Numerical(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
