//! CLI error taxonomy. Usage errors never reach this type — clap reports
//! them itself with exit code 2.

use spherelift_core::CoreError;

/// Failure classes with their process exit codes: configuration problems
/// exit 3, data problems (missing or malformed files, shape disagreements)
/// exit 4, violated numeric properties (failed checks, divergence) exit 5.
#[derive(Debug)]
pub enum CliError {
    Config(String),
    Data(String),
    Property(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 3,
            CliError::Data(_) => 4,
            CliError::Property(_) => 5,
        }
    }

    /// Single-line machine-readable form, printed to stderr on failure.
    pub fn to_json_line(&self) -> String {
        let (kind, msg) = match self {
            CliError::Config(m) => ("config", m),
            CliError::Data(m) => ("data", m),
            CliError::Property(m) => ("property", m),
        };
        serde_json::json!({
            "event": "error",
            "kind": kind,
            "exit_code": self.exit_code(),
            "message": msg,
        })
        .to_string()
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        match &e {
            CoreError::InvalidConfig(_) => CliError::Config(e.to_string()),
            CoreError::NonFinite(_) | CoreError::Divergence { .. } => {
                CliError::Property(e.to_string())
            }
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

pub type CliResult<T> = Result<T, CliError>;
