use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the conformal pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("insufficient data for {context}: need at least {needed}, got {got}")]
    InsufficientData {
        context: &'static str,
        needed: usize,
        got: usize,
    },

    #[error(
        "filter is singular at tau={tau}: eigenvalue {eigenvalue} gives 1 - tau(1 - lambda) = {factor}"
    )]
    FilterSingular {
        tau: f64,
        eigenvalue: f64,
        factor: f64,
    },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("ensemble member {member} failed: {source}")]
    Ensemble {
        member: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("ingestion error: {0}")]
    Ingestion(String),

    #[error("parse error in {path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("run {run}, {mode} mode, horizon {horizon}, step {step}: {source}")]
    Step {
        run: usize,
        mode: &'static str,
        horizon: usize,
        step: usize,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            message: message.into(),
        }
    }

    /// True for errors caused by bad user input rather than runtime failure.
    pub fn is_input_error(&self) -> bool {
        match self {
            Error::InvalidInput(_) | Error::Parse { .. } | Error::Ingestion(_) => true,
            Error::Step { source, .. } | Error::Ensemble { source, .. } => source.is_input_error(),
            _ => false,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
