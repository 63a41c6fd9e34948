use std::path::PathBuf;

use thiserror::Error;

pub type CliResult<T> = std::result::Result<T, CliError>;

/// Process exit codes. These values are part of the command-line contract.
pub mod exit {
    pub const OK: i32 = 0;
    pub const FAILURE: i32 = 1;
    pub const BAD_INPUT: i32 = 2;
    pub const NON_FINITE: i32 = 3;
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{file}: key `{key}`: {message}")]
    ConfigKey { file: PathBuf, key: String, message: String },

    #[error("{file}: {message}")]
    Config { file: PathBuf, message: String },

    #[error("invalid setting: {0}")]
    Setting(String),

    #[error("missing file {0} (run the earlier pipeline stage first)")]
    MissingFile(PathBuf),

    #[error("checkpoint {file}: {message}")]
    Checkpoint { file: PathBuf, message: String },

    #[error("training produced a non-finite loss or parameter at step {0}")]
    NonFinite(usize),

    #[error("{file}: {source}")]
    Io { file: PathBuf, source: std::io::Error },

    #[error(transparent)]
    Core(midt_core::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::ConfigKey { .. }
            | CliError::Config { .. }
            | CliError::Setting(_)
            | CliError::MissingFile(_)
            | CliError::Checkpoint { .. } => exit::BAD_INPUT,
            CliError::NonFinite(_) => exit::NON_FINITE,
            CliError::Io { .. } | CliError::Core(_) => exit::FAILURE,
        }
    }

    pub fn io(file: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> CliError {
        let file = file.into();
        move |source| CliError::Io { file, source }
    }

    pub fn checkpoint(file: impl Into<PathBuf>, message: impl Into<String>) -> CliError {
        CliError::Checkpoint { file: file.into(), message: message.into() }
    }
}

impl From<midt_core::Error> for CliError {
    fn from(e: midt_core::Error) -> Self {
        match e {
            midt_core::Error::NonFinite { step } => CliError::NonFinite(step),
            other => CliError::Core(other),
        }
    }
}
