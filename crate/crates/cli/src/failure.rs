use std::fmt;

use serde::Serialize;

pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_MISSING: i32 = 3;

/// Invalid or unreadable configuration.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

/// An artifact an earlier command should have produced is absent.
#[derive(Debug)]
pub struct MissingPrerequisite(pub String);

impl fmt::Display for MissingPrerequisite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "missing prerequisite: {}", self.0)
    }
}

impl std::error::Error for MissingPrerequisite {}

/// Machine-readable error line written to stderr on failure.
#[derive(Debug, Serialize)]
pub struct ErrorRecord {
    pub error: &'static str,
    pub exit_code: i32,
    pub message: String,
}

pub fn classify(err: &anyhow::Error) -> ErrorRecord {
    let message = format!("{err:#}");
    for cause in err.chain() {
        if cause.downcast_ref::<ConfigError>().is_some() {
            return ErrorRecord { error: "config", exit_code: EXIT_CONFIG, message };
        }
        if cause.downcast_ref::<MissingPrerequisite>().is_some()
            || matches!(cause.downcast_ref::<densal_core::Error>(), Some(densal_core::Error::MissingFile(_)))
        {
            return ErrorRecord { error: "missing_prerequisite", exit_code: EXIT_MISSING, message };
        }
    }
    ErrorRecord { error: "runtime", exit_code: EXIT_FAILURE, message }
}
