//! The JSON record every subcommand leaves next to its outputs.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use chrono::{SecondsFormat, Utc};
use craft_core::config::json_digest;
use craft_core::mixer::file_digest;
use serde::Serialize;
use serde_json::Value;

use crate::error::CliError;

#[derive(Debug, Serialize)]
pub struct RunRecord {
    pub command: String,
    pub version: &'static str,
    pub started_at: String,
    pub duration_seconds: f64,
    pub config_digest: String,
    pub config: Value,
    /// SHA-256 of each input file that is small enough to hash.
    pub inputs: BTreeMap<String, String>,
    pub outputs: Vec<PathBuf>,
    pub stats: Value,
    pub status: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<Value>,
}

pub struct RunTimer {
    command: String,
    started_at: String,
    started: Instant,
}

impl RunTimer {
    pub fn start(command: &str) -> Self {
        RunTimer {
            command: command.to_string(),
            started_at: Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true),
            started: Instant::now(),
        }
    }

    pub fn finish(
        self,
        config: &impl Serialize,
        inputs: BTreeMap<String, String>,
        outputs: Vec<PathBuf>,
        stats: &impl Serialize,
        error: Option<&CliError>,
    ) -> RunRecord {
        RunRecord {
            command: self.command,
            version: env!("CARGO_PKG_VERSION"),
            started_at: self.started_at,
            duration_seconds: self.started.elapsed().as_secs_f64(),
            config_digest: json_digest(config),
            config: serde_json::to_value(config).expect("config serializes"),
            inputs,
            outputs,
            stats: serde_json::to_value(stats).expect("stats serialize"),
            status: if error.is_some() { "failed" } else { "ok" },
            error: error.map(|e| serde_json::to_value(e).expect("error serializes")),
        }
    }
}

pub fn digests<'a>(paths: impl IntoIterator<Item = &'a Path>) -> Result<BTreeMap<String, String>, CliError> {
    paths
        .into_iter()
        .map(|p| Ok((p.display().to_string(), file_digest(p)?)))
        .collect()
}

pub fn write(path: &Path, record: &RunRecord) -> Result<(), CliError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
    }
    let body = serde_json::to_vec_pretty(record).expect("run record serializes");
    std::fs::write(path, body).map_err(|e| CliError::io(path, e))?;
    log::info!("run record written to {}", path.display());
    Ok(())
}

/// `<path>.<suffix>`, e.g. `mix.jsonl.run.json`.
pub fn sidecar(path: &Path, suffix: &str) -> PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(suffix);
    PathBuf::from(name)
}
