use std::path::{Path, PathBuf};
use std::time::Instant;

use geoloc::scene::write_atomic;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputFile {
    pub path: PathBuf,
    pub sha256: String,
}

/// Record written next to the outputs of every command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    /// Full command line as invoked.
    pub arguments: Vec<String>,
    /// Resolved configuration after defaults and overrides.
    pub config: serde_json::Value,
    pub seed: Option<u64>,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<OutputFile>,
    pub tool_version: String,
    pub wall_time_seconds: f64,
}

pub fn sha256_file(path: &Path) -> Result<String, CliError> {
    let bytes = std::fs::read(path).map_err(|e| CliError::Internal(format!("{}: {e}", path.display())))?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

pub struct ManifestBuilder {
    command: String,
    started: Instant,
    pub config: serde_json::Value,
    pub seed: Option<u64>,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
}

impl ManifestBuilder {
    pub fn new(command: &str) -> Self {
        Self {
            command: command.to_string(),
            started: Instant::now(),
            config: serde_json::Value::Null,
            seed: None,
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    /// Writes `<command>.manifest.json` into `dir` and returns its path.
    pub fn finish(self, dir: &Path) -> Result<PathBuf, CliError> {
        let outputs = self
            .outputs
            .iter()
            .map(|p| Ok(OutputFile { path: p.clone(), sha256: sha256_file(p)? }))
            .collect::<Result<Vec<_>, CliError>>()?;
        let manifest = RunManifest {
            command: self.command.clone(),
            arguments: std::env::args().collect(),
            config: self.config,
            seed: self.seed,
            inputs: self.inputs,
            outputs,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            wall_time_seconds: self.started.elapsed().as_secs_f64(),
        };
        let path = dir.join(format!("{}.manifest.json", self.command));
        let text = serde_json::to_string_pretty(&manifest).map_err(|e| CliError::Internal(e.to_string()))?;
        write_atomic(&path, text.as_bytes())?;
        Ok(path)
    }
}
