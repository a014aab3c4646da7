use std::path::Path;

/// Failures of a subcommand, each mapped to a stable exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Unreadable or malformed input files, or inconsistent inputs.
    #[error("{0}")]
    Input(String),
    /// A numeric routine failed on valid input.
    #[error("{name}: {0}", name = .0.name())]
    Numeric(twophase::Error),
    #[error("{0}")]
    Usage(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => 2,
            CliError::Numeric(_) => 3,
            CliError::Usage(_) => 4,
        }
    }

    pub fn io(path: &Path, err: impl std::fmt::Display) -> Self {
        CliError::Input(format!("{}: {err}", path.display()))
    }
}

impl From<twophase::Error> for CliError {
    fn from(e: twophase::Error) -> Self {
        if e.is_input_error() {
            CliError::Input(e.to_string())
        } else {
            CliError::Numeric(e)
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
