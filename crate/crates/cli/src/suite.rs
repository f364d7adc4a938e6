use std::collections::HashSet;
use std::path::{Path, PathBuf};

use annealed_posterior::sampler::json_digest;
use serde::{Deserialize, Serialize};

use crate::config::{self, Experiment, ExperimentConfig, Overrides};
use crate::error::{CliError, ErrorRecord};
use crate::manifest::{csv_table, opt_cell, sha256_hex, write_atomic, write_json, OutputRoot, RunManifest, MANIFEST_FILE};
use crate::presets;
use crate::run::{execute, prepare_dir, resolve_output_root};

pub const SUITE_FILE: &str = "suite.json";
pub const SUMMARY_FILE: &str = "summary.csv";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SuiteConfig {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_root: Option<PathBuf>,
    pub members: Vec<SuiteMember>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SuiteMember {
    /// Bundle directory name; defaults to the experiment name.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub source: MemberSource,
    #[serde(default, skip_serializing_if = "Overrides::is_empty")]
    pub overrides: Overrides,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum MemberSource {
    Preset(String),
    /// Relative to the suite file.
    Path(PathBuf),
    Config(ExperimentConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemberOutcome {
    pub name: String,
    pub ok: bool,
    pub exit_code: i32,
    pub config_hash: Option<String>,
    pub manifest: Option<String>,
    pub error: Option<ErrorRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub rate: f64,
    pub runs: usize,
    pub failed: usize,
    pub stop_time: f64,
    pub kl_mean: Option<f64>,
    pub kl_std_err: Option<f64>,
    pub tv_mean: Option<f64>,
    pub tv_std_err: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteManifest {
    pub name: String,
    pub software_version: String,
    pub suite_hash: String,
    pub output_root: OutputRoot,
    pub finished: bool,
    pub members: Vec<MemberOutcome>,
    pub summary: Vec<SummaryRow>,
    pub summary_file: Option<String>,
    pub summary_sha256: Option<String>,
}

pub fn load_suite(source: &str) -> Result<(SuiteConfig, PathBuf), CliError> {
    if let Some(name) = source.strip_prefix("preset:") {
        return Ok((presets::suite(name)?, PathBuf::from(".")));
    }
    let path = Path::new(source);
    let suite: SuiteConfig = config::parse_json(&config::read_text(path)?)?;
    Ok((suite, path.parent().unwrap_or(Path::new(".")).to_path_buf()))
}

fn member_config(m: &SuiteMember, base: &Path, flags: &Overrides) -> Result<ExperimentConfig, CliError> {
    let mut cfg = match &m.source {
        MemberSource::Preset(p) => presets::experiment(p)?,
        MemberSource::Path(p) => config::load_config(&base.join(p).to_string_lossy())?,
        MemberSource::Config(c) => config::resolve_files(c.clone(), base)?,
    };
    if let Some(n) = &m.name {
        cfg.name = n.clone();
    }
    cfg.apply(&m.overrides.then(flags))?;
    cfg.validate()?;
    Ok(cfg)
}

fn mean_se(v: &[f64]) -> (Option<f64>, Option<f64>) {
    if v.is_empty() {
        return (None, None);
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let se = (v.len() > 1).then(|| (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0) / n).sqrt());
    (Some(mean), se)
}

fn final_value(m: &RunManifest, kind: &str) -> Option<f64> {
    let t = m.checkpoints.iter().find(|c| c.is_final)?.target_time;
    m.divergences
        .iter()
        .find(|d| d.kind == kind && d.target_time == t)
        .map(|d| d.value)
}

/// Runs every member in order, then writes `summary.csv` grouping sampler
/// runs by rate. Member failures are recorded and reported at the end.
pub fn run_suite(source: &str, flags: &Overrides, out: Option<&Path>) -> Result<SuiteManifest, CliError> {
    let (suite, base) = load_suite(source)?;
    if suite.members.is_empty() {
        return Err(CliError::config("members", "suite has no members"));
    }
    let configs: Vec<(String, Result<ExperimentConfig, CliError>)> = suite
        .members
        .iter()
        .enumerate()
        .map(|(i, m)| {
            let cfg = member_config(m, &base, flags);
            let name = match (&cfg, &m.name) {
                (Ok(c), _) => c.name.clone(),
                (Err(_), Some(n)) => n.clone(),
                (Err(_), None) => format!("member-{i}"),
            };
            (name, cfg)
        })
        .collect();
    let mut seen = HashSet::new();
    for (name, _) in &configs {
        if !seen.insert(name.as_str()) {
            return Err(CliError::config("members", format!("duplicate member name `{name}`")));
        }
    }
    let hashes: Vec<Option<String>> = configs
        .iter()
        .map(|(_, c)| c.as_ref().ok().and_then(|c| c.hash().ok()))
        .collect();
    let suite_hash = json_digest(&(&suite.name, &hashes)).map_err(|e| CliError::Failed(e.to_string()))?;

    let root = resolve_output_root(out, suite.output_root.as_deref());
    let dir = root.path.join(&suite.name);
    prepare_dir(&dir, SUITE_FILE)?;
    let mut manifest = SuiteManifest {
        name: suite.name.clone(),
        software_version: env!("CARGO_PKG_VERSION").to_string(),
        suite_hash: suite_hash.clone(),
        output_root: root.clone(),
        finished: false,
        members: Vec::new(),
        summary: Vec::new(),
        summary_file: None,
        summary_sha256: None,
    };
    write_json(&dir.join(SUITE_FILE), &manifest)?;

    let mut finished: Vec<(Option<ExperimentConfig>, Option<RunManifest>)> = Vec::new();
    for ((name, cfg), hash) in configs.into_iter().zip(hashes) {
        let (cfg, result) = match cfg {
            Ok(c) => {
                let r = execute(&c, &root, &dir.join(&name));
                (Some(c), r)
            }
            Err(e) => (None, Err(e)),
        };
        let outcome = MemberOutcome {
            name: name.clone(),
            ok: result.is_ok(),
            exit_code: result.as_ref().err().map_or(0, CliError::exit_code),
            config_hash: hash,
            manifest: dir
                .join(&name)
                .join(MANIFEST_FILE)
                .is_file()
                .then(|| format!("{name}/{MANIFEST_FILE}")),
            error: result.as_ref().err().map(CliError::record),
        };
        if let Err(e) = &result {
            eprintln!("member {name} failed: {e}");
        }
        manifest.members.push(outcome);
        finished.push((cfg, result.ok()));
        write_json(&dir.join(SUITE_FILE), &manifest)?;
    }

    manifest.summary = summarize(&finished);
    let rows: Vec<Vec<String>> = manifest
        .summary
        .iter()
        .map(|r| {
            vec![
                r.rate.to_string(),
                r.runs.to_string(),
                r.failed.to_string(),
                r.stop_time.to_string(),
                opt_cell(r.kl_mean),
                opt_cell(r.kl_std_err),
                opt_cell(r.tv_mean),
                opt_cell(r.tv_std_err),
            ]
        })
        .collect();
    let header = [
        "rate",
        "runs",
        "failed",
        "stop_time",
        "kl_mean",
        "kl_std_err",
        "tv_mean",
        "tv_std_err",
    ];
    let meta = [("suite", suite.name.clone()), ("config_hash", suite_hash)];
    let table = csv_table(&meta, &header, &rows)?;
    write_atomic(&dir.join(SUMMARY_FILE), &table)?;
    manifest.summary_file = Some(SUMMARY_FILE.to_string());
    manifest.summary_sha256 = Some(sha256_hex(&table));
    manifest.finished = true;
    write_json(&dir.join(SUITE_FILE), &manifest)?;

    let failed = manifest.members.iter().filter(|m| !m.ok).count();
    if failed > 0 {
        return Err(CliError::Failed(format!(
            "{failed} of {} suite members failed",
            manifest.members.len()
        )));
    }
    Ok(manifest)
}

/// One row per sampler rate, ascending, over final-batch KL and TV.
fn summarize(finished: &[(Option<ExperimentConfig>, Option<RunManifest>)]) -> Vec<SummaryRow> {
    let mut groups: Vec<(f64, f64, Vec<&RunManifest>, usize)> = Vec::new();
    for (cfg, run) in finished {
        let Some(Experiment::PosteriorSampling(s)) = cfg.as_ref().map(|c| &c.experiment) else {
            continue;
        };
        let rate = s.sampler.rate;
        let idx = match groups.iter().position(|g| g.0 == rate) {
            Some(i) => i,
            None => {
                groups.push((rate, s.sampler.stop_time(), Vec::new(), 0));
                groups.len() - 1
            }
        };
        match run {
            Some(m) => groups[idx].2.push(m),
            None => groups[idx].3 += 1,
        }
    }
    groups.sort_by(|a, b| a.0.total_cmp(&b.0));
    groups
        .into_iter()
        .map(|(rate, stop_time, runs, failed)| {
            let kl: Vec<f64> = runs.iter().filter_map(|m| final_value(m, "KL")).collect();
            let tv: Vec<f64> = runs.iter().filter_map(|m| final_value(m, "TV")).collect();
            let (kl_mean, kl_std_err) = mean_se(&kl);
            let (tv_mean, tv_std_err) = mean_se(&tv);
            SummaryRow {
                rate,
                runs: runs.len(),
                failed,
                stop_time,
                kl_mean,
                kl_std_err,
                tv_mean,
                tv_std_err,
            }
        })
        .collect()
}
