use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, ErrorRecord};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const CONFIG_FILE: &str = "config.json";
/// Wall-clock sidecar; not part of the reproducible bundle.
pub const TIMINGS_FILE: &str = "timings.json";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Running,
    Ok,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputRoot {
    pub path: PathBuf,
    /// `flag`, `env`, `config` or `default`.
    pub source: String,
    /// Name of the environment variable consulted.
    pub env_var: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseRecord {
    pub name: String,
    pub iterations: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtifactRecord {
    pub file: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointRecord {
    pub target_time: f64,
    pub algorithm_iter: u64,
    pub averaged: bool,
    pub is_final: bool,
    pub chains: usize,
    pub file: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DivergenceRecord {
    pub target_time: f64,
    pub kind: String,
    pub value: f64,
    pub estimator: String,
    pub spec: String,
    pub std_err: Option<f64>,
}

/// A diagnostic that could not be computed for one batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticFailure {
    pub target_time: f64,
    pub kind: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeWeightRecord {
    pub target_time: f64,
    pub empirical: Vec<f64>,
    pub std_errs: Vec<f64>,
    /// Exact cell masses of the reference law (1D only).
    pub analytic: Option<Vec<f64>>,
    pub heavier_empirical: usize,
    pub heavier_analytic: Option<usize>,
    pub max_abs_error: Option<f64>,
    /// Every cell within three standard errors of the exact mass.
    pub within_3se: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlippedRecord {
    pub separation: f64,
    pub fisher: f64,
    /// `10ℓ²e^{-ℓ²/2}`.
    pub fisher_bound: f64,
    pub kl: f64,
    /// Light over heavy posterior weight.
    pub weight_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LsiRecord {
    pub instance: String,
    pub separation: f64,
    pub measure: String,
    /// `lsi_ratio` or `bar_mass`.
    pub quantity: String,
    pub value: f64,
    pub bound: f64,
    /// `lower` or `upper`.
    pub bound_kind: String,
    pub holds: bool,
}

/// Everything a run produced, rewritten after each stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub format: u32,
    pub name: String,
    pub software_version: String,
    pub config_hash: String,
    pub config_file: String,
    pub output_root: OutputRoot,
    pub status: Status,
    #[serde(default)]
    pub seed: Option<u64>,
    pub timings_file: String,
    #[serde(default)]
    pub phases: Vec<PhaseRecord>,
    #[serde(default)]
    pub checkpoints: Vec<CheckpointRecord>,
    #[serde(default)]
    pub divergences: Vec<DivergenceRecord>,
    #[serde(default)]
    pub diagnostic_failures: Vec<DiagnosticFailure>,
    #[serde(default)]
    pub mode_weights: Vec<ModeWeightRecord>,
    #[serde(default)]
    pub flipped_pair: Vec<FlippedRecord>,
    #[serde(default)]
    pub lsi: Vec<LsiRecord>,
    /// Tables and the stored config.
    #[serde(default)]
    pub artifacts: Vec<ArtifactRecord>,
    #[serde(default)]
    pub error: Option<ErrorRecord>,
}

impl RunManifest {
    pub fn new(name: &str, config_hash: &str, output_root: OutputRoot) -> Self {
        RunManifest {
            format: FORMAT_VERSION,
            name: name.to_string(),
            software_version: env!("CARGO_PKG_VERSION").to_string(),
            config_hash: config_hash.to_string(),
            config_file: CONFIG_FILE.to_string(),
            output_root,
            status: Status::Running,
            seed: None,
            timings_file: TIMINGS_FILE.to_string(),
            phases: Vec::new(),
            checkpoints: Vec::new(),
            divergences: Vec::new(),
            diagnostic_failures: Vec::new(),
            mode_weights: Vec::new(),
            flipped_pair: Vec::new(),
            lsi: Vec::new(),
            artifacts: Vec::new(),
            error: None,
        }
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::fs(path, e))?;
        serde_json::from_str(&text).map_err(|e| CliError::Failed(format!("{}: {e}", path.display())))
    }

    pub fn flush(&self, dir: &Path) -> Result<(), CliError> {
        write_json(&dir.join(MANIFEST_FILE), self)
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> Result<String, CliError> {
    let bytes = fs::read(path).map_err(|e| CliError::fs(path, e))?;
    Ok(sha256_hex(&bytes))
}

/// Writes via a temporary sibling and a rename, so readers never see a
/// partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes).map_err(|e| CliError::fs(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| CliError::fs(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| CliError::Failed(e.to_string()))?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

/// CSV with `# key=value` lines up front, as the sample files use.
pub fn csv_table(meta: &[(&str, String)], header: &[&str], rows: &[Vec<String>]) -> Result<Vec<u8>, CliError> {
    let mut out = Vec::new();
    for (k, v) in meta {
        out.extend_from_slice(format!("# {k}={v}\n").as_bytes());
    }
    let mut w = csv::Writer::from_writer(&mut out);
    let fail = |e: csv::Error| CliError::Failed(e.to_string());
    w.write_record(header).map_err(fail)?;
    for row in rows {
        w.write_record(row).map_err(fail)?;
    }
    w.flush().map_err(|e| CliError::Failed(e.to_string()))?;
    drop(w);
    Ok(out)
}

/// `# key=value` metadata at the head of an artifact.
pub fn csv_meta(bytes: &[u8]) -> Vec<(String, String)> {
    String::from_utf8_lossy(bytes)
        .lines()
        .map_while(|l| l.strip_prefix('#'))
        .filter_map(|m| m.trim().split_once('=').map(|(k, v)| (k.to_string(), v.to_string())))
        .collect()
}

pub fn opt_cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}
