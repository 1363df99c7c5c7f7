use std::process::ExitCode;

#[derive(Debug)]
pub enum CliError {
    /// Bad flags, config or inputs.
    Config(String),
    Runtime(anyhow::Error),
    /// Some verify-shrinkage rows had a singular filter.
    FilterSingular,
}

impl CliError {
    pub fn exit_code(&self) -> ExitCode {
        match self {
            CliError::Config(_) => ExitCode::from(2),
            CliError::Runtime(_) => ExitCode::from(1),
            CliError::FilterSingular => ExitCode::from(3),
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(msg) => write!(f, "configuration error: {msg}"),
            CliError::Runtime(e) => write!(f, "error: {e:#}"),
            CliError::FilterSingular => write!(f, "filter is singular for at least one tau"),
        }
    }
}

impl From<graphcp::Error> for CliError {
    fn from(e: graphcp::Error) -> Self {
        if e.is_input_error() {
            CliError::Config(e.to_string())
        } else {
            CliError::Runtime(e.into())
        }
    }
}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        CliError::Runtime(e)
    }
}

pub type CliResult<T> = Result<T, CliError>;

pub fn config(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}
