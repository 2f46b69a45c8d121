//! One error type for everything the binary can hit. Every variant is a
//! data or environment problem (exit code 2); argument parsing never
//! reaches this type.

use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}:{line}: {message}", path.display())]
    Line {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("{0}")]
    Data(String),
    #[error("[{stage}] {message}")]
    Stage { stage: String, message: String },
}

impl CliError {
    pub fn data(message: impl Into<String>) -> Self {
        CliError::Data(message.into())
    }

    pub fn stage(stage: &str, message: impl std::fmt::Display) -> Self {
        CliError::Stage {
            stage: stage.to_string(),
            message: message.to_string(),
        }
    }
}
