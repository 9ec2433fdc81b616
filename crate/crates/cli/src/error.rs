use std::path::PathBuf;

use mrac_core::MracError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid config at {path}: {message}")]
    Config { path: String, message: String },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("simulation failed: {0}")]
    Sim(#[from] MracError),

    #[error("CSV output failed: {0}")]
    Csv(#[from] csv::Error),

    #[error("JSON output failed: {0}")]
    Json(#[from] serde_json::Error),
}

impl CliError {
    /// Machine-readable kind written to `error.json`.
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Config { .. } => "config_invalid",
            CliError::Io { .. } => "io_error",
            CliError::Sim(MracError::NonFiniteState { .. }) => "non_finite_state",
            CliError::Sim(_) => "simulation_error",
            CliError::Csv(_) | CliError::Json(_) => "output_error",
        }
    }

    pub fn field_path(&self) -> Option<&str> {
        match self {
            CliError::Config { path, .. } => Some(path),
            _ => None,
        }
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config { .. } => 2,
            _ => 1,
        }
    }
}
