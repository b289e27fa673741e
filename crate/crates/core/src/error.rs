//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid argument: bad labels, dimension mismatches, unnormalized inputs.
    #[error("argument error: {0}")]
    Argument(String),

    /// Numerical failure: non-finite values, singular solves, drift beyond tolerance.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// Optical netlist topology problem (dangling or doubly-consumed port).
    #[error("network topology error at line {line}, column {column}: {message}")]
    Topology {
        line: usize,
        column: usize,
        message: String,
    },

    /// A mode transform failed its unitarity check.
    #[error("calibration error: {0}")]
    Calibration(String),

    /// An operation was invoked outside its protocol contract.
    #[error("contract error: {0}")]
    Contract(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn argument(msg: impl Into<String>) -> Self {
        Error::Argument(msg.into())
    }
    pub fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }
    pub fn calibration(msg: impl Into<String>) -> Self {
        Error::Calibration(msg.into())
    }
    pub fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }
    pub fn topology(line: usize, column: usize, msg: impl Into<String>) -> Self {
        Error::Topology {
            line,
            column,
            message: msg.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
