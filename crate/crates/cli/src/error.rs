use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// The scenario or summary does not satisfy its schema.
    #[error("validation error: {0}")]
    Validation(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{0}")]
    Runtime(String),

    /// Some sweep points failed; the others were written.
    #[error("{failed} of {total} sweep points failed")]
    PartialFailure { failed: usize, total: usize },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 2,
            _ => 1,
        }
    }
}

impl From<moesim_core::Error> for CliError {
    fn from(e: moesim_core::Error) -> Self {
        match e {
            moesim_core::Error::Validation { .. } | moesim_core::Error::Parse { .. } => {
                CliError::Validation(e.to_string())
            }
            other => CliError::Runtime(other.to_string()),
        }
    }
}

pub(crate) fn invalid(key: impl Into<String>, reason: impl std::fmt::Display) -> CliError {
    CliError::Validation(format!("invalid {}: {reason}", key.into()))
}
