use hitchin_glue::{AssemblyError, LinearizeError, MetricsError, PartitionError, TodaError};
use thiserror::Error;

/// Failures surfaced to the shell, split by exit code: flag and descriptor
/// problems exit 2, compute and artifact problems exit 3.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Parse(String),
    #[error("{0}")]
    Pipeline(String),
}

impl CliError {
    pub fn parse(msg: impl Into<String>) -> Self {
        CliError::Parse(msg.into())
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Parse(_) => 2,
            CliError::Pipeline(_) => 3,
        }
    }

    /// Tag for the machine-readable error record.
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Parse(_) => "parse",
            CliError::Pipeline(_) => "pipeline",
        }
    }
}

impl From<PartitionError> for CliError {
    fn from(e: PartitionError) -> Self {
        CliError::Parse(e.to_string())
    }
}

impl From<TodaError> for CliError {
    fn from(e: TodaError) -> Self {
        // Configuration rejections come from user flags; the rest are
        // numeric or domain failures.
        match e {
            TodaError::InvalidConfig(_) => CliError::Parse(e.to_string()),
            _ => CliError::Pipeline(e.to_string()),
        }
    }
}

impl From<MetricsError> for CliError {
    fn from(e: MetricsError) -> Self {
        CliError::Pipeline(e.to_string())
    }
}

impl From<AssemblyError> for CliError {
    fn from(e: AssemblyError) -> Self {
        CliError::Pipeline(e.to_string())
    }
}

impl From<LinearizeError> for CliError {
    fn from(e: LinearizeError) -> Self {
        CliError::Pipeline(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Pipeline(e.to_string())
    }
}
