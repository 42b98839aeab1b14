use std::path::PathBuf;

use marl_core::MarlError;
use serde_json::json;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] MarlError),

    #[error("stage {stage} needs {missing}, which does not exist; run the producing stage first")]
    StageDependency { stage: &'static str, missing: PathBuf },

    #[error("output directory is locked by {0}; another stage may be running")]
    Locked(PathBuf),

    #[error("config: {0}")]
    Config(String),
}

impl CliError {
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Core(e) => e.kind(),
            CliError::StageDependency { .. } => "stage_dependency",
            CliError::Locked(_) => "locked",
            CliError::Config(_) => "config",
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Core(MarlError::Config(_)) => 2,
            CliError::StageDependency { .. } => 3,
            CliError::Locked(_) => 4,
            CliError::Core(_) => 1,
        }
    }

    pub fn to_json(&self) -> serde_json::Value {
        let mut err = json!({ "kind": self.kind(), "message": self.to_string() });
        if let CliError::StageDependency { missing, .. } = self {
            err["missing"] = json!(missing);
        }
        json!({ "level": "error", "error": err })
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
