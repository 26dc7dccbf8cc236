use thiserror::Error;

use ttfed_core::bound::BoundError;
use ttfed_core::config::ConfigError;
use ttfed_core::engine::EngineError;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad input: exit status 2.
    #[error("{0}")]
    Config(String),
    /// Failure while running: exit status 1.
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            Self::Config(_) => 2,
            Self::Runtime(_) => 1,
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        Self::Config(format!("config: {e}"))
    }
}

impl From<BoundError> for CliError {
    fn from(e: BoundError) -> Self {
        Self::Config(format!("constants: {e}"))
    }
}

impl From<EngineError> for CliError {
    fn from(e: EngineError) -> Self {
        match e {
            EngineError::Config(c) => c.into(),
            EngineError::TooManyTiers { .. } => Self::Config(format!("config: {e}")),
            other => Self::Runtime(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::Runtime(format!("i/o: {e}"))
    }
}
