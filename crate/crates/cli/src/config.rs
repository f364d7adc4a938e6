use std::path::{Path, PathBuf};

use annealed_posterior::diagnostics::{DivergenceKind, Region};
use annealed_posterior::lsi::DEFAULT_THICKNESS;
use annealed_posterior::sampler::json_digest;
use annealed_posterior::{GaussianMixture, QuadraticPotential, SamplerConfig};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::CliError;
use crate::presets;

const SAMPLING: &str = "experiment.posterior_sampling";

/// One experiment: what to build, how to run it, where to write.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    /// Output root; a flag or the environment variable takes precedence.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_root: Option<PathBuf>,
    pub experiment: Experiment,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Experiment {
    PosteriorSampling(SamplingExperiment),
    FlippedPair(FlippedPairExperiment),
    Lsi(LsiExperiment),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplingExperiment {
    pub prior: PriorSpec,
    pub measurement: QuadraticPotential,
    pub sampler: SamplerConfig,
    #[serde(default)]
    pub diagnostics: DiagnosticsSpec,
}

/// Inline mixture, or a JSON file holding one (relative to the config).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum PriorSpec {
    Inline(GaussianMixture),
    File(PathBuf),
}

impl PriorSpec {
    pub fn mixture(&self) -> Result<&GaussianMixture, CliError> {
        match self {
            PriorSpec::Inline(p) => Ok(p),
            PriorSpec::File(path) => Err(CliError::config(
                format!("{SAMPLING}.prior.file"),
                format!("{} was never loaded", path.display()),
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiagnosticsSpec {
    /// Histogram bins (total; split evenly across axes in 2D).
    #[serde(default = "default_bins")]
    pub bins: usize,
    /// `TV`, `KL` and `W2-1D` come from the histogram pass; `FI` is the
    /// kernel score estimate.
    #[serde(default = "default_divergences")]
    pub divergences: Vec<DivergenceKind>,
    /// Cells for mode-weight records; empty means none.
    #[serde(default)]
    pub mode_partition: Vec<Region>,
    /// Samples fed to the kernel score estimate.
    #[serde(default = "default_kde_samples")]
    pub kde_max_samples: usize,
    /// Also diagnose intermediate checkpoints, not just the final batch.
    #[serde(default = "default_true")]
    pub at_checkpoints: bool,
}

fn default_bins() -> usize {
    200
}

fn default_divergences() -> Vec<DivergenceKind> {
    vec![DivergenceKind::Tv, DivergenceKind::Kl, DivergenceKind::W2OneD]
}

fn default_kde_samples() -> usize {
    2000
}

fn default_true() -> bool {
    true
}

impl Default for DiagnosticsSpec {
    fn default() -> Self {
        DiagnosticsSpec {
            bins: default_bins(),
            divergences: default_divergences(),
            mode_partition: Vec::new(),
            kde_max_samples: default_kde_samples(),
            at_checkpoints: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlippedPairExperiment {
    pub separations: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LsiExperiment {
    #[serde(default)]
    pub segment_separations: Vec<f64>,
    #[serde(default)]
    pub u_shape_separations: Vec<f64>,
    #[serde(default = "default_thickness")]
    pub thickness: f64,
}

fn default_thickness() -> f64 {
    DEFAULT_THICKNESS
}

/// Command-line replacements for sampler fields.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Overrides {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chains: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rate: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step_size: Option<f64>,
}

impl Overrides {
    pub fn is_empty(&self) -> bool {
        self == &Overrides::default()
    }

    /// Layers `other` on top of `self`.
    pub fn then(&self, other: &Overrides) -> Overrides {
        Overrides {
            seed: other.seed.or(self.seed),
            chains: other.chains.or(self.chains),
            rate: other.rate.or(self.rate),
            step_size: other.step_size.or(self.step_size),
        }
    }
}

impl ExperimentConfig {
    /// Digest of everything that affects results (the output root does not).
    pub fn hash(&self) -> Result<String, CliError> {
        json_digest(&(&self.name, &self.experiment)).map_err(|e| CliError::Failed(e.to_string()))
    }

    pub fn apply(&mut self, o: &Overrides) -> Result<(), CliError> {
        match &mut self.experiment {
            Experiment::PosteriorSampling(s) => {
                let cfg = &mut s.sampler;
                if let Some(v) = o.seed {
                    cfg.seed = v;
                }
                if let Some(v) = o.chains {
                    cfg.chains = v;
                }
                if let Some(v) = o.rate {
                    cfg.rate = v;
                }
                if let Some(v) = o.step_size {
                    cfg.step_size = Some(v);
                }
                Ok(())
            }
            _ if o.is_empty() => Ok(()),
            _ => {
                let flag = [
                    (o.seed.is_some(), "--seed"),
                    (o.chains.is_some(), "--chains"),
                    (o.rate.is_some(), "--kappa"),
                    (o.step_size.is_some(), "--delta"),
                ]
                .into_iter()
                .find(|(set, _)| *set)
                .map(|(_, f)| f)
                .unwrap_or_default();
                Err(CliError::config(flag, "only applies to posterior_sampling experiments"))
            }
        }
    }

    /// Semantic checks beyond the schema.
    pub fn validate(&self) -> Result<(), CliError> {
        let name_ok = !self.name.is_empty()
            && self.name != "."
            && self.name != ".."
            && self.name.chars().all(|c| c.is_ascii_alphanumeric() || "._-".contains(c));
        if !name_ok {
            return Err(CliError::config("name", format!("`{}` is not a plain file name", self.name)));
        }
        match &self.experiment {
            Experiment::PosteriorSampling(s) => validate_sampling(s),
            Experiment::FlippedPair(f) => {
                let field = "experiment.flipped_pair.separations";
                if f.separations.is_empty() {
                    return Err(CliError::config(field, "list at least one separation"));
                }
                if let Some(l) = f.separations.iter().find(|l| !(l.is_finite() && **l >= 2.0)) {
                    return Err(CliError::config(field, format!("separations must be >= 2, got {l}")));
                }
                Ok(())
            }
            Experiment::Lsi(l) => {
                if l.segment_separations.is_empty() && l.u_shape_separations.is_empty() {
                    return Err(CliError::config("experiment.lsi", "list at least one instance"));
                }
                if let Some(v) = l.segment_separations.iter().find(|v| !(v.is_finite() && **v >= 1.0)) {
                    return Err(CliError::config(
                        "experiment.lsi.segment_separations",
                        format!("must be >= 1, got {v}"),
                    ));
                }
                if let Some(v) = l.u_shape_separations.iter().find(|v| !(v.is_finite() && **v >= 2.0)) {
                    return Err(CliError::config(
                        "experiment.lsi.u_shape_separations",
                        format!("must be >= 2, got {v}"),
                    ));
                }
                if !(l.thickness.is_finite() && l.thickness > 0.0) {
                    return Err(CliError::config(
                        "experiment.lsi.thickness",
                        format!("must be positive, got {}", l.thickness),
                    ));
                }
                Ok(())
            }
        }
    }
}

fn validate_sampling(s: &SamplingExperiment) -> Result<(), CliError> {
    let prior = s.prior.mixture()?;
    s.sampler
        .validate()
        .map_err(|e| CliError::from_validation(e, &format!("{SAMPLING}.sampler")))?;
    let d = prior.dim();
    if s.measurement.dim() != d {
        return Err(CliError::config(
            format!("{SAMPLING}.measurement"),
            format!("potential acts on dimension {}, prior on {d}", s.measurement.dim()),
        ));
    }
    let diag = &s.diagnostics;
    let field = |f: &str| format!("{SAMPLING}.diagnostics.{f}");
    if diag.bins == 0 {
        return Err(CliError::config(field("bins"), "must be at least 1"));
    }
    for kind in &diag.divergences {
        match kind {
            DivergenceKind::Tv | DivergenceKind::Kl if d > 2 => {
                return Err(CliError::config(
                    field("divergences"),
                    format!("histogram {} needs dimension <= 2", kind.label()),
                ));
            }
            DivergenceKind::W2OneD if d != 1 => {
                return Err(CliError::config(field("divergences"), "W2-1D needs dimension 1"));
            }
            DivergenceKind::ModeWeights => {
                return Err(CliError::config(
                    field("divergences"),
                    "mode weights are requested through mode_partition",
                ));
            }
            _ => {}
        }
    }
    if diag.divergences.contains(&DivergenceKind::Fi) && diag.kde_max_samples < 2 {
        return Err(CliError::config(field("kde_max_samples"), "must be at least 2"));
    }
    for (i, region) in diag.mode_partition.iter().enumerate() {
        let ok = match region {
            Region::Below { normal, offset } | Region::AtLeast { normal, offset } => {
                normal.len() == d && offset.is_finite() && normal.iter().all(|v| v.is_finite())
            }
            Region::Box { lo, hi } => lo.len() == d && hi.len() == d,
        };
        if !ok {
            return Err(CliError::config(
                field(&format!("mode_partition[{i}]")),
                format!("region must be finite and act on dimension {d}"),
            ));
        }
    }
    Ok(())
}

/// Parses JSON, reporting the path of the offending field.
pub fn parse_json<T: DeserializeOwned>(text: &str) -> Result<T, CliError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let field = if path == "." { String::new() } else { path };
        CliError::config(field, e.into_inner().to_string())
    })
}

pub fn read_text(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::fs(path, e))
}

/// `preset:NAME` or a path to a JSON config. File priors are inlined.
pub fn load_config(source: &str) -> Result<ExperimentConfig, CliError> {
    if let Some(name) = source.strip_prefix("preset:") {
        return presets::experiment(name);
    }
    let path = Path::new(source);
    let cfg: ExperimentConfig = parse_json(&read_text(path)?)?;
    resolve_files(cfg, path.parent().unwrap_or(Path::new(".")))
}

/// Replaces file priors by their contents, so the stored config is self-contained.
pub fn resolve_files(mut cfg: ExperimentConfig, base: &Path) -> Result<ExperimentConfig, CliError> {
    if let Experiment::PosteriorSampling(s) = &mut cfg.experiment {
        if let PriorSpec::File(rel) = &s.prior {
            let path = base.join(rel);
            let mixture: GaussianMixture = parse_json(&read_text(&path)?).map_err(|e| match e {
                CliError::Config { field, message } => {
                    CliError::config(format!("{SAMPLING}.prior.file"), format!("{}: {field} {message}", path.display()))
                }
                other => other,
            })?;
            s.prior = PriorSpec::Inline(mixture);
        }
    }
    Ok(cfg)
}
