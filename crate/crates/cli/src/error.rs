use aad_core::code_sync::SyncError;
use aad_core::engine::EngineError;
use aad_core::plugin::PluginError;
use aad_core::trace::TraceError;
use aad_server::{PackageError, ProjectError, ServeError};

/// One failure, printed as `error: <code>: <message>`.
#[derive(Debug, thiserror::Error)]
#[error("{code}: {message}")]
pub struct CliError {
    pub code: String,
    pub message: String,
}

impl CliError {
    pub fn new(code: &str, message: impl Into<String>) -> CliError {
        CliError {
            code: code.into(),
            message: message.into(),
        }
    }
}

macro_rules! coded {
    ($($ty:ty),*) => {$(
        impl From<$ty> for CliError {
            fn from(e: $ty) -> Self {
                CliError::new(e.code(), e.to_string())
            }
        }
    )*};
}

coded!(SyncError, PluginError, PackageError, ProjectError, ServeError);

impl From<EngineError> for CliError {
    fn from(e: EngineError) -> Self {
        match e {
            EngineError::Failed { error, .. } => CliError::new(&error.kind, error.to_string()),
            other => CliError::new(other.code(), other.to_string()),
        }
    }
}

impl From<TraceError> for CliError {
    fn from(e: TraceError) -> Self {
        CliError::new("TraceError", e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::new("IoError", e.to_string())
    }
}

pub type CliResult<T> = Result<T, CliError>;
