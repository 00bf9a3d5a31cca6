//! Run configuration: a TOML file with one table per pipeline stage. Missing
//! keys take their defaults; command-line flags override file values.

use std::path::{Path, PathBuf};

use auscult_core::alignment::TrainConfig;
use auscult_core::encoder::EncoderConfig;
use auscult_core::eval::ProbeConfig;
use auscult_core::retrieval::Aggregation;
use auscult_core::teacher::{HashEmbedder, PrecomputedEmbedder, RemoteClient, RemoteConfig, TextEmbedder, DEFAULT_TEACHER_DIM};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::synth::SynthConfig;
use crate::CliError;

/// Environment variable naming the remote-teacher cache directory.
pub const CACHE_DIR_ENV: &str = "AUSCULT_CACHE_DIR";

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub data: SynthConfig,
    pub encoder: EncoderConfig,
    pub align: AlignSettings,
    pub teacher: TeacherSettings,
    pub probe: ProbeSettings,
    pub zeroshot: ZeroShotSettings,
}

impl Config {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::invalid(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::invalid(format!("config {}: {e}", path.display())))
    }

    pub fn load_or_default(path: Option<&Path>) -> Result<Self, CliError> {
        path.map_or_else(|| Ok(Self::default()), Self::load)
    }

    /// The file (or defaults) with `section.key=value` overrides applied.
    /// Values parse as TOML and fall back to plain strings.
    pub fn resolve(path: Option<&Path>, overrides: &[String]) -> Result<Self, CliError> {
        let mut root = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::invalid(format!("cannot read config {}: {e}", p.display())))?;
                text.parse::<toml::Table>()
                    .map_err(|e| CliError::invalid(format!("config {}: {e}", p.display())))?
            }
            None => toml::Table::new(),
        };
        let mut problems = Vec::new();
        for o in overrides {
            if let Err(msg) = apply_override(&mut root, o) {
                problems.push(msg);
            }
        }
        if !problems.is_empty() {
            return Err(CliError::Validation(problems));
        }
        toml::Value::Table(root)
            .try_into()
            .map_err(|e: toml::de::Error| CliError::invalid(e.to_string()))
    }
}

fn apply_override(root: &mut toml::Table, spec: &str) -> Result<(), String> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| format!("override {spec:?} is not key=value"))?;
    let path: Vec<&str> = key.trim().split('.').collect();
    if path.iter().any(|p| p.is_empty()) {
        return Err(format!("override {spec:?} has an empty key segment"));
    }
    let value = format!("v = {}", raw.trim())
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.trim().to_string()));
    let (last, parents) = path.split_last().expect("non-empty");
    let mut table = root;
    for p in parents {
        let slot = table
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = slot
            .as_table_mut()
            .ok_or_else(|| format!("override {spec:?}: {p} is not a table"))?;
    }
    table.insert(last.to_string(), value);
    Ok(())
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitKind {
    #[default]
    Random,
    Checkpoint,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AlignSettings {
    pub init: InitKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub init_checkpoint: Option<PathBuf>,
    /// Keep only entries whose dataset tag or modality matches.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub corpus_filter: Option<String>,
    pub train: TrainConfig,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TeacherKind {
    #[default]
    Hashed,
    File,
    Remote,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TeacherSettings {
    pub kind: TeacherKind,
    pub dim: usize,
    /// Seed of the hashed embedder.
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
    pub timeout_ms: u64,
}

impl Default for TeacherSettings {
    fn default() -> Self {
        Self {
            kind: TeacherKind::Hashed,
            dim: DEFAULT_TEACHER_DIM,
            seed: 0,
            path: None,
            endpoint: None,
            timeout_ms: 30_000,
        }
    }
}

impl TeacherSettings {
    pub fn build(&self) -> Result<Box<dyn TextEmbedder>, CliError> {
        Ok(match self.kind {
            TeacherKind::Hashed => {
                if self.dim == 0 {
                    return Err(CliError::invalid("teacher.dim must be positive"));
                }
                Box::new(HashEmbedder {
                    dim: self.dim,
                    seed: self.seed,
                })
            }
            TeacherKind::File => {
                let path = self
                    .path
                    .as_ref()
                    .ok_or_else(|| CliError::invalid("teacher.kind = \"file\" needs teacher.path"))?;
                Box::new(PrecomputedEmbedder::from_file(path, self.dim)?)
            }
            TeacherKind::Remote => {
                let endpoint = self
                    .endpoint
                    .clone()
                    .ok_or_else(|| CliError::invalid("teacher.kind = \"remote\" needs teacher.endpoint"))?;
                Box::new(RemoteClient::http(RemoteConfig {
                    endpoint,
                    dim: self.dim,
                    timeout_ms: self.timeout_ms,
                    cache_dir: std::env::var_os(CACHE_DIR_ENV).map(PathBuf::from),
                    ..RemoteConfig::default()
                }))
            }
        })
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    #[default]
    Classification,
    Regression,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeSettings {
    pub task: String,
    pub kind: TaskKind,
    pub seeds: Vec<u64>,
    /// Share of subjects held out for testing (classification).
    pub test_fraction: f64,
    pub config: ProbeConfig,
}

impl Default for ProbeSettings {
    fn default() -> Self {
        Self {
            task: "diagnosis".into(),
            kind: TaskKind::Classification,
            seeds: (0..5).collect(),
            test_fraction: 0.2,
            config: ProbeConfig::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IndexSource {
    /// Train reports through the teacher and the language head.
    Reports,
    /// Train clips through the audio head; each id points at its report.
    #[default]
    TrainAudio,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ZeroShotSettings {
    pub k: usize,
    pub aggregation: Aggregation,
    /// Defaults to the distinct train labels in sorted order.
    pub class_names: Vec<String>,
    pub index_source: IndexSource,
    /// Permute report texts across train clips (chance-level control).
    pub shuffle_reports: bool,
    pub seed: u64,
}

impl Default for ZeroShotSettings {
    fn default() -> Self {
        Self {
            k: 5,
            aggregation: Aggregation::MeanEmbedding,
            class_names: Vec::new(),
            index_source: IndexSource::TrainAudio,
            shuffle_reports: false,
            seed: 0,
        }
    }
}

/// Hex SHA-256 of the JSON encoding of `value`.
pub fn digest_of<T: Serialize>(value: &T) -> String {
    let json = serde_json::to_vec(value).expect("config serializes");
    hex::encode(Sha256::digest(json))
}
