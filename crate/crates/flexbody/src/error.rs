use std::io;
use std::path::PathBuf;

use serde_json::json;

use crate::scenarios::Scenario;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{scenario} needs {what}: run `{required}` first and pass it with {flag}")]
    MissingPrerequisite {
        scenario: Scenario,
        required: Scenario,
        what: &'static str,
        flag: &'static str,
    },
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
    #[error("{}: {source}", path.display())]
    Json { path: PathBuf, source: serde_json::Error },
    #[error("{}: {source}", path.display())]
    Csv { path: PathBuf, source: csv::Error },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] flexbody_core::Error),
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Self::Io { path: path.into(), source }
    }

    pub fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Self::Json { path: path.into(), source }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Self::MissingPrerequisite { .. } => "missing-prerequisite",
            Self::Io { .. } => "io",
            Self::Json { .. } => "format",
            Self::Csv { .. } => "csv",
            Self::Config(_) => "config",
            Self::Model(_) => "model",
        }
    }

    /// Exit status: 2 for bad input, 1 for failures while running.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Model(_) => 1,
            _ => 2,
        }
    }

    pub fn to_json(&self) -> serde_json::Value {
        let mut v = json!({ "kind": self.kind(), "message": self.to_string() });
        match self {
            Self::MissingPrerequisite { required, flag, .. } => {
                v["required_scenario"] = json!(required.name());
                v["flag"] = json!(flag);
            }
            Self::Io { path, .. } | Self::Json { path, .. } | Self::Csv { path, .. } => {
                v["path"] = json!(path);
            }
            _ => {}
        }
        json!({ "error": v })
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;
