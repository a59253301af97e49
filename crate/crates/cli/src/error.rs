use std::path::Path;

use pacl::corpus::CorpusError;
use pacl::trainer::TrainError;
use pacl::wordlevel::WordLevelError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad arguments, unreadable or malformed inputs, invalid configuration.
    #[error("{0}")]
    Input(String),
    /// Failures after inputs were accepted.
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Input(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }

    pub fn input(path: &Path, e: impl std::fmt::Display) -> Self {
        CliError::Input(format!("{}: {e}", path.display()))
    }

    pub fn io(path: &Path, e: std::io::Error) -> Self {
        CliError::Runtime(format!("{}: {e}", path.display()))
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Config { .. } | TrainError::EmptyDataset | TrainError::SequenceTooLong { .. } | TrainError::UnknownLabel(_) => {
                CliError::Input(e.to_string())
            }
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<CorpusError> for CliError {
    fn from(e: CorpusError) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<WordLevelError> for CliError {
    fn from(e: WordLevelError) -> Self {
        CliError::Input(e.to_string())
    }
}
