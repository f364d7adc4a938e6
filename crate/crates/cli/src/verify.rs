use std::fs;
use std::path::Path;

use crate::config::{parse_json, ExperimentConfig};
use crate::error::CliError;
use crate::manifest::{csv_meta, sha256_hex, RunManifest, CONFIG_FILE};
use crate::suite::{SuiteManifest, SUITE_FILE};

/// Problems found while re-hashing a bundle; empty means it checks out.
pub type Findings = Vec<String>;

fn read(path: &Path) -> Result<Vec<u8>, CliError> {
    fs::read(path).map_err(|e| CliError::fs(path, e))
}

fn check_file(dir: &Path, rel: &str, sha256: &str, hash: &str, out: &mut Findings) -> Result<(), CliError> {
    let bytes = read(&dir.join(rel))?;
    if sha256_hex(&bytes) != sha256 {
        out.push(format!("{rel}: content hash differs from the manifest"));
    }
    if rel.ends_with(".csv") {
        let meta = csv_meta(&bytes);
        match meta.iter().find(|(k, _)| k == "config_hash") {
            Some((_, v)) if v == hash => {}
            Some((_, v)) => out.push(format!("{rel}: carries config hash {v}, manifest has {hash}")),
            None => out.push(format!("{rel}: no config hash line")),
        }
    }
    Ok(())
}

/// Re-hashes the stored config and every artifact a run manifest lists.
pub fn verify_run(manifest_path: &Path) -> Result<Findings, CliError> {
    let m = RunManifest::load(manifest_path)?;
    let dir = manifest_path.parent().unwrap_or(Path::new("."));
    let mut out = Vec::new();
    let text = String::from_utf8_lossy(&read(&dir.join(&m.config_file))?).into_owned();
    let cfg: ExperimentConfig = parse_json(&text)?;
    let rehash = cfg.hash()?;
    if rehash != m.config_hash {
        out.push(format!("{}: hashes to {rehash}, manifest has {}", m.config_file, m.config_hash));
    }
    if !m.artifacts.iter().any(|a| a.file == CONFIG_FILE) {
        out.push(format!("{CONFIG_FILE} is not listed among the artifacts"));
    }
    for c in &m.checkpoints {
        check_file(dir, &c.file, &c.sha256, &m.config_hash, &mut out)?;
    }
    for a in &m.artifacts {
        check_file(dir, &a.file, &a.sha256, &m.config_hash, &mut out)?;
    }
    Ok(out)
}

/// Verifies each member bundle and the summary table of a suite.
pub fn verify_suite(path: &Path) -> Result<Findings, CliError> {
    let text = String::from_utf8_lossy(&read(path)?).into_owned();
    let m: SuiteManifest = serde_json::from_str(&text).map_err(|e| CliError::Failed(format!("{}: {e}", path.display())))?;
    let dir = path.parent().unwrap_or(Path::new("."));
    let mut out = Vec::new();
    for member in &m.members {
        if let Some(rel) = &member.manifest {
            for f in verify_run(&dir.join(rel))? {
                out.push(format!("{}: {f}", member.name));
            }
        }
    }
    if let (Some(file), Some(sha)) = (&m.summary_file, &m.summary_sha256) {
        check_file(dir, file, sha, &m.suite_hash, &mut out)?;
    } else {
        out.push("suite never finished writing its summary".to_string());
    }
    Ok(out)
}

/// Dispatches on the file name: `suite.json` or a run manifest.
pub fn verify(path: &Path) -> Result<Findings, CliError> {
    if path.file_name().is_some_and(|n| n == SUITE_FILE) {
        verify_suite(path)
    } else {
        verify_run(path)
    }
}

