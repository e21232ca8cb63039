use std::fs;
use std::io::{self, Write};
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;
use serde_json::{json, Value};

use d12_core::error::{CheckpointError, IngestError, TrainError};

use crate::args::Global;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn code(&self) -> u8 {
        match self {
            Self::Validation(_) => 1,
            Self::Runtime(_) => 2,
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            Self::Validation(_) => "validation",
            Self::Runtime(_) => "runtime",
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::NonFiniteLoss { .. } => Self::Runtime(e.to_string()),
            _ => Self::Validation(e.to_string()),
        }
    }
}

impl From<CheckpointError> for CliError {
    fn from(e: CheckpointError) -> Self {
        Self::Validation(e.to_string())
    }
}

impl From<IngestError> for CliError {
    fn from(e: IngestError) -> Self {
        Self::Validation(e.to_string())
    }
}

/// Writes to stdout, ignoring a closed pipe.
fn print_line(line: &str) {
    let _ = writeln!(io::stdout().lock(), "{line}");
}

pub fn print_error(e: &CliError) {
    let body = json!({ "error": { "kind": e.kind(), "code": e.code(), "message": e.to_string() } });
    print_line(&body.to_string());
}

pub fn read_input(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))
}

pub fn write_output(path: &Path, contents: &[u8]) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

pub struct Context {
    pub global: Global,
}

impl Context {
    pub fn new(global: &Global) -> Self {
        Self { global: global.clone() }
    }

    pub fn log(&self, line: &str) {
        if !self.global.quiet {
            eprintln!("{line}");
        }
    }

    /// Prints `report` as one JSON object on stdout with the command name
    /// and, unless disabled, a timestamp.
    pub fn emit(&self, command: &str, report: impl Serialize) -> Result<(), CliError> {
        let mut value = serde_json::to_value(report).map_err(|e| CliError::Runtime(e.to_string()))?;
        let Value::Object(fields) = &mut value else {
            return Err(CliError::Runtime("report is not a JSON object".into()));
        };
        fields.insert("command".into(), command.into());
        if !self.global.no_timestamp {
            let secs = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
            fields.insert("timestamp".into(), secs.into());
        }
        print_line(&value.to_string());
        Ok(())
    }
}
