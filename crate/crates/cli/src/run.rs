use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use annealed_posterior::diagnostics::{
    analytic_mode_weights_1d, empirical_divergences, flipped_posterior_example, flipped_weight_ratio,
    kde_fisher_estimate, mode_weights, DivergenceKind, DivergenceReport,
};
use annealed_posterior::lsi::{lsi_ratio, segment_instance, u_shape_instance, U_BAR};
use annealed_posterior::sampler::{run_algorithm, PhaseReport};
use annealed_posterior::{GaussianMixture, QuadraticPotential, SampleBatch, SmoothTime};
use serde::{Deserialize, Serialize};

use crate::config::{DiagnosticsSpec, Experiment, ExperimentConfig, FlippedPairExperiment, LsiExperiment, SamplingExperiment};
use crate::error::CliError;
use crate::manifest::{
    csv_table, opt_cell, sha256_hex, write_atomic, write_json, ArtifactRecord, CheckpointRecord, DiagnosticFailure,
    DivergenceRecord, FlippedRecord, LsiRecord, ModeWeightRecord, OutputRoot, PhaseRecord, RunManifest, Status,
    CONFIG_FILE, MANIFEST_FILE, TIMINGS_FILE,
};

/// Variable naming the output root when no `--out` flag is given.
pub const OUTPUT_ROOT_ENV: &str = "ANNEALED_POSTERIOR_OUTPUT_ROOT";
pub const DEFAULT_OUTPUT_ROOT: &str = "runs";
pub const DIVERGENCES_FILE: &str = "divergences.csv";
pub const MODE_WEIGHTS_FILE: &str = "mode_weights.csv";
pub const FLIPPED_FILE: &str = "flipped_pair.csv";
pub const LSI_FILE: &str = "lsi.csv";

/// Flag, then environment, then config, then `runs/`.
pub fn resolve_output_root(flag: Option<&Path>, config: Option<&Path>) -> OutputRoot {
    let env = std::env::var_os(OUTPUT_ROOT_ENV).filter(|v| !v.is_empty());
    let (path, source) = match (flag, env, config) {
        (Some(p), _, _) => (p.to_path_buf(), "flag"),
        (None, Some(e), _) => (PathBuf::from(e), "env"),
        (None, None, Some(c)) => (c.to_path_buf(), "config"),
        (None, None, None) => (PathBuf::from(DEFAULT_OUTPUT_ROOT), "default"),
    };
    OutputRoot {
        path,
        source: source.to_string(),
        env_var: OUTPUT_ROOT_ENV.to_string(),
    }
}

/// Empties a directory previously written by this tool; refuses anything else.
pub fn prepare_dir(dir: &Path, marker: &str) -> Result<(), CliError> {
    if dir.exists() {
        let mut entries = fs::read_dir(dir).map_err(|e| CliError::fs(dir, e))?;
        if entries.next().is_some() {
            if !dir.join(marker).is_file() {
                return Err(CliError::fs(
                    dir,
                    std::io::Error::new(
                        std::io::ErrorKind::AlreadyExists,
                        format!("directory is not empty and holds no {marker}"),
                    ),
                ));
            }
            fs::remove_dir_all(dir).map_err(|e| CliError::fs(dir, e))?;
        }
    }
    fs::create_dir_all(dir).map_err(|e| CliError::fs(dir, e))
}

#[derive(Debug, Default, Serialize, Deserialize)]
struct Timings {
    phases: Vec<PhaseReport>,
    diagnostics_secs: f64,
    total_secs: f64,
}

struct Bundle<'a> {
    dir: &'a Path,
    hash: String,
    name: String,
    manifest: RunManifest,
    timings: Timings,
}

impl Bundle<'_> {
    fn meta(&self) -> Vec<(&'static str, String)> {
        vec![("name", self.name.clone()), ("config_hash", self.hash.clone())]
    }

    fn write(&mut self, rel: &str, bytes: &[u8]) -> Result<String, CliError> {
        let path = self.dir.join(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| CliError::fs(parent, e))?;
        }
        write_atomic(&path, bytes)?;
        Ok(sha256_hex(bytes))
    }

    fn write_artifact(&mut self, rel: &str, bytes: &[u8]) -> Result<(), CliError> {
        let sha256 = self.write(rel, bytes)?;
        self.manifest.artifacts.push(ArtifactRecord {
            file: rel.to_string(),
            sha256,
        });
        Ok(())
    }

    fn flush(&self) -> Result<(), CliError> {
        self.manifest.flush(self.dir)
    }
}

/// Validates `cfg`, runs it and writes its bundle into `dir`.
///
/// Once the bundle exists, failures are recorded in its manifest before
/// being returned.
pub fn execute(cfg: &ExperimentConfig, root: &OutputRoot, dir: &Path) -> Result<RunManifest, CliError> {
    cfg.validate()?;
    let hash = cfg.hash()?;
    prepare_dir(dir, MANIFEST_FILE)?;
    let started = Instant::now();
    let mut bundle = Bundle {
        dir,
        hash: hash.clone(),
        name: cfg.name.clone(),
        manifest: RunManifest::new(&cfg.name, &hash, root.clone()),
        timings: Timings::default(),
    };
    let mut config_bytes = serde_json::to_vec_pretty(cfg).map_err(|e| CliError::Failed(e.to_string()))?;
    config_bytes.push(b'\n');
    bundle.write_artifact(CONFIG_FILE, &config_bytes)?;
    bundle.flush()?;

    let outcome = match &cfg.experiment {
        Experiment::PosteriorSampling(s) => run_sampling(&mut bundle, s),
        Experiment::FlippedPair(f) => run_flipped(&mut bundle, f),
        Experiment::Lsi(l) => run_lsi(&mut bundle, l),
    };
    bundle.timings.total_secs = started.elapsed().as_secs_f64();
    let _ = write_json(&dir.join(TIMINGS_FILE), &bundle.timings);
    match outcome {
        Ok(()) => {
            bundle.manifest.status = Status::Ok;
            bundle.flush()?;
            Ok(bundle.manifest)
        }
        Err(e) => {
            bundle.manifest.status = Status::Failed;
            bundle.manifest.error = Some(e.record());
            let _ = bundle.flush();
            Err(e)
        }
    }
}

fn run_sampling(bundle: &mut Bundle, s: &SamplingExperiment) -> Result<(), CliError> {
    let prior = s.prior.mixture()?.clone();
    let cfg = &s.sampler;
    bundle.manifest.seed = Some(cfg.seed);
    bundle.flush()?;
    let out = run_algorithm(&prior, &s.measurement, cfg).map_err(CliError::from_run)?;
    bundle.manifest.phases = out
        .phases
        .iter()
        .map(|p| PhaseRecord {
            name: p.name.clone(),
            iterations: p.iterations,
        })
        .collect();
    bundle.timings.phases = out.phases.clone();
    bundle.flush()?;

    let diag_started = Instant::now();
    let n_checkpoints = out.checkpoints.len();
    let batches = out.checkpoints.into_iter().chain(std::iter::once(out.final_batch));
    for (i, mut batch) in batches.enumerate() {
        let is_final = i == n_checkpoints;
        let rel = if is_final {
            "samples/final.csv".to_string()
        } else {
            format!("samples/checkpoint_{i:02}.csv")
        };
        batch.config_hash = bundle.hash.clone();
        let mut bytes = Vec::new();
        batch
            .write_csv(&mut bytes, &[("name", bundle.name.clone()), ("final", is_final.to_string())])
            .map_err(|e| CliError::Failed(e.to_string()))?;
        let sha256 = bundle.write(&rel, &bytes)?;
        bundle.manifest.checkpoints.push(CheckpointRecord {
            target_time: batch.target_time,
            algorithm_iter: batch.algorithm_iter,
            averaged: batch.averaged,
            is_final,
            chains: batch.len(),
            file: rel,
            sha256,
        });
        if is_final || s.diagnostics.at_checkpoints {
            diagnose(&mut bundle.manifest, &batch, &prior, &s.measurement, &s.diagnostics)?;
        }
        bundle.flush()?;
    }
    bundle.timings.diagnostics_secs = diag_started.elapsed().as_secs_f64();

    let rows: Vec<Vec<String>> = bundle
        .manifest
        .divergences
        .iter()
        .map(|d| vec![d.target_time.to_string(), d.kind.clone(), d.value.to_string(), opt_cell(d.std_err)])
        .collect();
    let table = csv_table(&bundle.meta(), &["target_time", "kind", "value", "std_err"], &rows)?;
    bundle.write_artifact(DIVERGENCES_FILE, &table)?;
    if !s.diagnostics.mode_partition.is_empty() {
        let mut rows = Vec::new();
        for m in &bundle.manifest.mode_weights {
            for (k, w) in m.empirical.iter().enumerate() {
                rows.push(vec![
                    m.target_time.to_string(),
                    k.to_string(),
                    w.to_string(),
                    m.std_errs[k].to_string(),
                    opt_cell(m.analytic.as_ref().map(|a| a[k])),
                ]);
            }
        }
        let header = ["target_time", "cell", "empirical", "std_err", "analytic"];
        let table = csv_table(&bundle.meta(), &header, &rows)?;
        bundle.write_artifact(MODE_WEIGHTS_FILE, &table)?;
    }
    bundle.flush()
}

/// The law the batch should follow: the tilt of the prior smoothed to the
/// batch's target time.
pub fn reference_law(prior: &GaussianMixture, r: &QuadraticPotential, t: f64) -> Result<GaussianMixture, CliError> {
    let t = SmoothTime::new(t).map_err(CliError::from_run)?;
    prior.ou_smooth(t).tilt(r).map_err(CliError::from_run)
}

fn diagnose(
    manifest: &mut RunManifest,
    batch: &SampleBatch,
    prior: &GaussianMixture,
    r: &QuadraticPotential,
    spec: &DiagnosticsSpec,
) -> Result<(), CliError> {
    let t = batch.target_time;
    let reference = reference_law(prior, r, t)?;
    let wanted = |k: DivergenceKind| spec.divergences.contains(&k);
    let push = |m: &mut RunManifest, rep: DivergenceReport| {
        m.divergences.push(DivergenceRecord {
            target_time: t,
            kind: rep.kind.label().to_string(),
            value: rep.value,
            estimator: serde_json::to_value(rep.estimator)
                .ok()
                .and_then(|v| v.as_str().map(str::to_string))
                .unwrap_or_default(),
            spec: rep.spec,
            std_err: rep.mc_std_err,
        })
    };
    let fail = |m: &mut RunManifest, kind: &str, e: annealed_posterior::Error| {
        m.diagnostic_failures.push(DiagnosticFailure {
            target_time: t,
            kind: kind.to_string(),
            message: e.to_string(),
        })
    };

    if wanted(DivergenceKind::Tv) || wanted(DivergenceKind::Kl) || wanted(DivergenceKind::W2OneD) {
        match empirical_divergences(batch, &reference, spec.bins) {
            Ok(reports) => {
                for rep in reports.into_iter().filter(|r| wanted(r.kind)) {
                    push(manifest, rep);
                }
            }
            Err(e) => fail(manifest, "histogram", e),
        }
    }
    if wanted(DivergenceKind::Fi) {
        let keep = spec.kde_max_samples.min(batch.len()) * batch.dim;
        let sub = SampleBatch::from_samples(batch.dim, batch.samples[..keep].to_vec(), t).map_err(CliError::from_run)?;
        match kde_fisher_estimate(&sub, &reference, None) {
            Ok(rep) => push(manifest, rep),
            Err(e) => fail(manifest, "FI", e),
        }
    }
    if !spec.mode_partition.is_empty() {
        match mode_weights(batch, &spec.mode_partition) {
            Ok(w) => {
                let analytic = if batch.dim == 1 {
                    analytic_mode_weights_1d(&reference, &spec.mode_partition).ok()
                } else {
                    None
                };
                let heavier_analytic = analytic.as_ref().map(|a| {
                    a.iter()
                        .enumerate()
                        .max_by(|x, y| x.1.total_cmp(y.1))
                        .map_or(0, |(i, _)| i)
                });
                let max_abs_error = analytic
                    .as_ref()
                    .map(|a| a.iter().zip(&w.weights).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max));
                let within_3se = analytic.as_ref().map(|a| {
                    a.iter()
                        .zip(w.weights.iter().zip(&w.std_errs))
                        .all(|(x, (y, se))| (x - y).abs() <= 3.0 * se)
                });
                manifest.mode_weights.push(ModeWeightRecord {
                    target_time: t,
                    heavier_empirical: w.heaviest(),
                    empirical: w.weights,
                    std_errs: w.std_errs,
                    analytic,
                    heavier_analytic,
                    max_abs_error,
                    within_3se,
                });
            }
            Err(e) => fail(manifest, "mode-weights", e),
        }
    }
    Ok(())
}

fn run_flipped(bundle: &mut Bundle, f: &FlippedPairExperiment) -> Result<(), CliError> {
    for &l in &f.separations {
        let pair = flipped_posterior_example(l).map_err(CliError::from_run)?;
        bundle.manifest.flipped_pair.push(FlippedRecord {
            separation: l,
            fisher: pair.fisher,
            fisher_bound: 10.0 * l * l * (-l * l / 2.0).exp(),
            kl: pair.kl,
            weight_ratio: flipped_weight_ratio(l),
        });
        bundle.flush()?;
    }
    let rows: Vec<Vec<String>> = bundle
        .manifest
        .flipped_pair
        .iter()
        .map(|r| {
            [r.separation, r.fisher, r.fisher_bound, r.kl, r.weight_ratio]
                .iter()
                .map(f64::to_string)
                .collect()
        })
        .collect();
    let header = ["separation", "fisher", "fisher_bound", "kl", "weight_ratio"];
    let table = csv_table(&bundle.meta(), &header, &rows)?;
    bundle.write_artifact(FLIPPED_FILE, &table)?;
    bundle.flush()
}

fn lsi_record(instance: &str, l: f64, measure: &str, quantity: &str, value: f64, bound: f64, upper: bool) -> LsiRecord {
    LsiRecord {
        instance: instance.to_string(),
        separation: l,
        measure: measure.to_string(),
        quantity: quantity.to_string(),
        value,
        bound,
        bound_kind: if upper { "upper" } else { "lower" }.to_string(),
        holds: if upper { value <= bound } else { value >= bound },
    }
}

fn run_lsi(bundle: &mut Bundle, cfg: &LsiExperiment) -> Result<(), CliError> {
    let err = CliError::from_run;
    let th = cfg.thickness;
    for &l in &cfg.segment_separations {
        let (flat, tilted, f) = segment_instance(l).map_err(err)?;
        let flat = lsi_ratio(&flat.with_thickness(th).map_err(err)?, &f).map_err(err)?;
        let tilted = lsi_ratio(&tilted.with_thickness(th).map_err(err)?, &f).map_err(err)?;
        let recs = &mut bundle.manifest.lsi;
        recs.push(lsi_record("segment", l, "flat", "lsi_ratio", flat, 0.1 * l.exp(), false));
        recs.push(lsi_record("segment", l, "tilted", "lsi_ratio", tilted, 2.0, true));
    }
    for &l in &cfg.u_shape_separations {
        let u = u_shape_instance(l).map_err(err)?;
        let flat = u.flat.with_thickness(th).map_err(err)?;
        let tilted = u.tilted.with_thickness(th).map_err(err)?;
        let f = &u.test_function;
        let tilted_ratio = lsi_ratio(&tilted, f).map_err(err)?;
        let flat_ratio = lsi_ratio(&flat, f).map_err(err)?;
        let bar_bound = (-l * l / 2.0).exp() * flat.unnormalized_mass(U_BAR) * 0.5f64.exp();
        let recs = &mut bundle.manifest.lsi;
        recs.push(lsi_record("u-shape", l, "tilted", "lsi_ratio", tilted_ratio, (l * l / 4.0).exp(), false));
        recs.push(lsi_record("u-shape", l, "flat", "lsi_ratio", flat_ratio, 10.0 * l * l, true));
        recs.push(lsi_record("u-shape", l, "tilted", "bar_mass", tilted.unnormalized_mass(U_BAR), bar_bound, true));
    }
    let rows: Vec<Vec<String>> = bundle
        .manifest
        .lsi
        .iter()
        .map(|r| {
            vec![
                r.instance.clone(),
                r.separation.to_string(),
                r.measure.clone(),
                r.quantity.clone(),
                r.value.to_string(),
                r.bound.to_string(),
                r.bound_kind.clone(),
                r.holds.to_string(),
            ]
        })
        .collect();
    let header = ["instance", "separation", "measure", "quantity", "value", "bound", "bound_kind", "holds"];
    let table = csv_table(&bundle.meta(), &header, &rows)?;
    bundle.write_artifact(LSI_FILE, &table)?;
    bundle.flush()
}
