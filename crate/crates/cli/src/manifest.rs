//! One run manifest per command invocation.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::digest_of;
use crate::CliError;

pub const RUN_MANIFEST: &str = "run_manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InputDigest {
    pub path: PathBuf,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub tool_version: String,
    /// Content hash of `config`.
    pub config_digest: String,
    pub seed: u64,
    pub started_unix_ms: u128,
    pub finished_unix_ms: u128,
    pub config: serde_json::Value,
    pub inputs: Vec<InputDigest>,
    /// Output files relative to the run directory.
    pub artifacts: Vec<String>,
}

fn now_ms() -> u128 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis())
}

pub fn file_digest(path: &Path) -> Result<String, CliError> {
    let bytes = fs::read(path).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
    Ok(hex::encode(Sha256::digest(bytes)))
}

/// Collects inputs and artifacts while a command runs.
pub struct RunRecorder {
    manifest: RunManifest,
}

impl RunRecorder {
    pub fn start<T: Serialize>(command: &str, config: &T, seed: u64) -> Self {
        Self {
            manifest: RunManifest {
                command: command.into(),
                tool_version: env!("CARGO_PKG_VERSION").into(),
                config_digest: digest_of(config),
                seed,
                started_unix_ms: now_ms(),
                finished_unix_ms: 0,
                config: serde_json::to_value(config).expect("config serializes"),
                inputs: Vec::new(),
                artifacts: Vec::new(),
            },
        }
    }

    pub fn input(&mut self, path: &Path) -> Result<(), CliError> {
        self.manifest.inputs.push(InputDigest {
            path: path.to_path_buf(),
            sha256: file_digest(path)?,
        });
        Ok(())
    }

    pub fn artifact(&mut self, relative: impl Into<String>) {
        self.manifest.artifacts.push(relative.into());
    }

    pub fn finish(mut self, dir: &Path) -> Result<RunManifest, CliError> {
        self.manifest.finished_unix_ms = now_ms();
        self.manifest.artifacts.sort();
        let text = serde_json::to_string_pretty(&self.manifest)?;
        fs::write(dir.join(RUN_MANIFEST), text)?;
        Ok(self.manifest)
    }
}
