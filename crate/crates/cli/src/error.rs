use std::fmt;

use serde::Serialize;

/// Failure categories, each with its own exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Kind {
    Validation,
    Solver,
}

#[derive(Debug)]
pub struct CliError {
    pub kind: Kind,
    pub message: String,
}

impl CliError {
    pub fn validation(message: impl Into<String>) -> Self {
        Self { kind: Kind::Validation, message: message.into() }
    }

    pub fn missing(field: &str) -> Self {
        Self::validation(format!("missing required field `{field}`"))
    }

    pub fn exit_code(&self) -> u8 {
        match self.kind {
            Kind::Validation => 2,
            Kind::Solver => 3,
        }
    }

    /// One-line JSON for stderr.
    pub fn to_json(&self) -> String {
        #[derive(Serialize)]
        struct Body<'a> {
            kind: Kind,
            message: &'a str,
        }
        #[derive(Serialize)]
        struct Wrapper<'a> {
            error: Body<'a>,
        }
        serde_json::to_string(&Wrapper { error: Body { kind: self.kind, message: &self.message } })
            .expect("string fields always serialize")
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}: {}", self.kind, self.message)
    }
}

impl From<lrinfer::Error> for CliError {
    fn from(e: lrinfer::Error) -> Self {
        let kind = if e.is_solver_failure() { Kind::Solver } else { Kind::Validation };
        Self { kind, message: e.to_string() }
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        Self::validation(e.to_string())
    }
}

pub type CliResult<T> = Result<T, CliError>;
