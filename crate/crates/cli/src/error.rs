use std::process::ExitCode;

use ctxtune::bench::BenchError;
use ctxtune::{IoError, SmootherError, TunerError};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("infeasible: {0}")]
    Infeasible(String),
    #[error("regression: {0}")]
    Regression(String),
    #[error(transparent)]
    Other(#[from] anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> ExitCode {
        match self {
            CliError::Config(_) => ExitCode::from(2),
            CliError::Infeasible(_) => ExitCode::from(3),
            CliError::Regression(_) => ExitCode::from(4),
            CliError::Other(_) => ExitCode::from(1),
        }
    }
}

impl From<IoError> for CliError {
    fn from(e: IoError) -> Self {
        CliError::Other(e.into())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Other(e.into())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Other(e.into())
    }
}

impl From<TunerError> for CliError {
    fn from(e: TunerError) -> Self {
        match e {
            TunerError::Config(m) => CliError::Config(m),
            other => CliError::Other(other.into()),
        }
    }
}

impl From<SmootherError> for CliError {
    fn from(e: SmootherError) -> Self {
        match e {
            SmootherError::Infeasible { .. } => CliError::Infeasible(e.to_string()),
            SmootherError::Config(m) => CliError::Config(m),
        }
    }
}

impl From<BenchError> for CliError {
    fn from(e: BenchError) -> Self {
        match e {
            BenchError::Tuner(t) => t.into(),
            BenchError::Smoother(s) => s.into(),
            BenchError::Io(io) => io.into(),
        }
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Other(e.into())
    }
}
