use std::fmt;

use serde::Serialize;

/// Process exit codes.
pub mod exit {
    pub const OK: i32 = 0;
    pub const INPUT: i32 = 2;
    pub const NUMERICAL: i32 = 3;
    pub const CALIBRATION: i32 = 4;
    pub const NO_ALARM: i32 = 5;
}

/// A failed command: exit code plus a one-line reason.
#[derive(Debug, Clone, Serialize)]
pub struct CliError {
    pub exit_code: i32,
    pub kind: &'static str,
    pub message: String,
}

impl CliError {
    pub fn input(message: impl Into<String>) -> Self {
        Self {
            exit_code: exit::INPUT,
            kind: "input",
            message: message.into(),
        }
    }

    pub fn numerical(message: impl Into<String>) -> Self {
        Self {
            exit_code: exit::NUMERICAL,
            kind: "numerical",
            message: message.into(),
        }
    }

    /// Single JSON line for stderr.
    pub fn to_line(&self) -> String {
        serde_json::to_string(self).unwrap_or_else(|_| format!("{{\"message\":{:?}}}", self.message))
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.kind, self.message)
    }
}

impl From<tpca::Error> for CliError {
    fn from(e: tpca::Error) -> Self {
        let message = e.to_string();
        match e {
            tpca::Error::InsufficientReplicates(_) => Self {
                exit_code: exit::CALIBRATION,
                kind: "calibration",
                message,
            },
            e if e.is_numerical() => Self::numerical(message),
            _ => Self::input(message),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::input(format!("io: {e}"))
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        Self::input(format!("json: {e}"))
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        Self::input(format!("csv: {e}"))
    }
}

pub type CliResult<T> = Result<T, CliError>;
