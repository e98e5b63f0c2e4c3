use std::fmt;

/// Command-line failure, partitioned by exit code: configuration problems
/// exit 1, runtime failures exit 2, and failed verification checks exit 3.
#[derive(Debug)]
pub enum CliError {
    Config(String),
    Runtime(String),
    Check(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Runtime(_) => 2,
            CliError::Check(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(msg) => write!(f, "config error: {msg}"),
            CliError::Runtime(msg) => write!(f, "runtime error: {msg}"),
            CliError::Check(msg) => write!(f, "check failed: {msg}"),
        }
    }
}

impl std::error::Error for CliError {}

/// Wraps any library error as a runtime failure.
pub fn runtime(e: impl fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}
