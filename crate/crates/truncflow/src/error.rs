use std::path::Path;

use truncflow_core::Error as CoreError;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config: {0}")]
    Parse(String),

    #[error("config field `{field}`: {message}")]
    Invalid { field: String, message: String },

    #[error(transparent)]
    Core(#[from] CoreError),

    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
}

impl CliError {
    pub fn invalid(field: impl Into<String>, message: impl Into<String>) -> Self {
        CliError::Invalid { field: field.into(), message: message.into() }
    }

    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io { path: path.display().to_string(), source }
    }

    /// 2 for anything wrong with the input, 3 when the integrator gives up.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Core(CoreError::StepUnderflow { .. }) => 3,
            CliError::Io { .. } => 1,
            _ => 2,
        }
    }
}
