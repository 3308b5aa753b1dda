//! Scenario runner for the `leo-consensus` command-line tool.
//!
//! Exit codes: 0 success, 1 configuration or I/O error, 2 a protocol property
//! was violated, 3 a ledger audit failed.

pub mod audit;
pub mod config;
pub mod experiments;
pub mod scenario;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use leo_consensus::ledger::AuditError;
use serde::Serialize;
use thiserror::Error;

use crate::config::{ConfigError, ScenarioConfig};

/// Output files by name. Contents are fully determined by config and seed.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Artifacts(BTreeMap<String, String>);

impl Artifacts {
    pub fn insert(&mut self, name: &str, contents: String) {
        self.0.insert(name.to_string(), contents);
    }

    pub fn get(&self, name: &str) -> Option<&str> {
        self.0.get(name).map(String::as_str)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.0.keys().map(String::as_str)
    }

    pub fn write_to(&self, dir: &Path) -> Result<(), CliError> {
        let io = |path: PathBuf| move |source| CliError::Io { path, source };
        std::fs::create_dir_all(dir).map_err(io(dir.to_path_buf()))?;
        for (name, contents) in &self.0 {
            let path = dir.join(name);
            std::fs::write(&path, contents).map_err(io(path.clone()))?;
        }
        Ok(())
    }
}

pub(crate) fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("summaries serialize");
    s.push('\n');
    s
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("cannot write {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{count} protocol property violations; first: {first}")]
    Violations { count: usize, first: String },
    #[error("ledger audit failed: {0}")]
    Audit(#[from] AuditError),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Io { .. } => 1,
            CliError::Violations { .. } => 2,
            CliError::Audit(_) => 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScenarioKind {
    Consensus,
    Constellation,
    Detection,
}

/// Result of one run. `error` is set when the run finished but a property
/// check failed; the artifacts are still complete.
#[derive(Debug)]
pub struct ScenarioResult {
    pub artifacts: Artifacts,
    pub error: Option<CliError>,
}

impl ScenarioResult {
    pub fn summary_text(&self) -> &str {
        self.artifacts.get("summary.txt").unwrap_or("")
    }

    pub fn exit_code(&self) -> i32 {
        self.error.as_ref().map_or(0, CliError::exit_code)
    }
}

pub fn run_scenario(cfg: &ScenarioConfig, kind: ScenarioKind) -> Result<ScenarioResult, CliError> {
    match kind {
        ScenarioKind::Consensus => {
            let run = scenario::run_consensus(cfg)?;
            let error = run.violations.first().map(|v| CliError::Violations {
                count: run.violations.len(),
                first: v.to_string(),
            });
            Ok(ScenarioResult {
                artifacts: run.artifacts,
                error,
            })
        }
        ScenarioKind::Constellation => Ok(ScenarioResult {
            artifacts: experiments::run_constellation(cfg)?.artifacts,
            error: None,
        }),
        ScenarioKind::Detection => Ok(ScenarioResult {
            artifacts: experiments::run_detection(cfg)?.artifacts,
            error: None,
        }),
    }
}

/// Scenario used by `consensus` when no file is given: four operators, one
/// active block, no adversary.
pub fn default_consensus_config() -> ScenarioConfig {
    ScenarioConfig::from_toml(
        r#"
[network]
n = 4
[protocol]
kind = "binary"
[tensor]
events = [{ period = 1, region = 1, subband = 1, operator = 2, rssi = -70.0 }]
"#,
    )
    .expect("built-in scenario parses")
}
