//! Built-in named instances.

use annealed_posterior::diagnostics::{flipped_instance, Region};
use annealed_posterior::lsi::DEFAULT_THICKNESS;
use annealed_posterior::{GaussianMixture, QuadraticPotential, SamplerConfig};

use crate::config::{
    DiagnosticsSpec, Experiment, ExperimentConfig, FlippedPairExperiment, LsiExperiment, Overrides, PriorSpec,
    SamplingExperiment,
};
use crate::error::CliError;
use crate::suite::{MemberSource, SuiteConfig, SuiteMember};

pub const PRESETS: &[(&str, &str)] = &[
    ("gaussian-identity", "standard Gaussian prior, flat likelihood: the sampler should return the prior"),
    ("two-mode", "modes at -3 and 3 with R(x) = (x-3)^2/9, rate 64, 1e5 chains"),
    ("appendixF-l3", "two-mode prior at +-3 with the likelihood favouring -3, rate 64"),
    ("flipped-pair", "Fisher vs KL for the posterior against its weight-flipped copy, l = 3, 4"),
    ("lsi-incomparability", "log-Sobolev ratios of the segment and u-shape curve measures"),
    ("kappa-sweep", "suite: two-mode instance at rates 1, 4, 16, 64 with 5 seeds each"),
];

pub const SUITE_PRESETS: &[&str] = &["kappa-sweep"];

/// Seeds used by the sweep.
pub const SWEEP_SEEDS: [u64; 5] = [1, 2, 3, 4, 5];
pub const SWEEP_RATES: [f64; 4] = [1.0, 4.0, 16.0, 64.0];
pub const SWEEP_CHAINS: usize = 20_000;

fn unknown(name: &str) -> CliError {
    let names: Vec<&str> = PRESETS.iter().map(|(n, _)| *n).collect();
    CliError::config("preset", format!("unknown preset `{name}`; known: {}", names.join(", ")))
}

fn sampling(
    name: &str,
    prior: GaussianMixture,
    measurement: QuadraticPotential,
    sampler: SamplerConfig,
    diagnostics: DiagnosticsSpec,
) -> ExperimentConfig {
    ExperimentConfig {
        name: name.to_string(),
        output_root: None,
        experiment: Experiment::PosteriorSampling(SamplingExperiment {
            prior: PriorSpec::Inline(prior),
            measurement,
            sampler,
            diagnostics,
        }),
    }
}

fn two_mode_prior() -> (GaussianMixture, QuadraticPotential) {
    let prior = GaussianMixture::univariate(&[(0.5, -3.0, 1.0), (0.5, 3.0, 1.0)]).expect("valid prior");
    let r = QuadraticPotential::new(vec![vec![1.0]], vec![3.0], 4.5).expect("valid potential");
    (prior, r)
}

fn halves() -> DiagnosticsSpec {
    DiagnosticsSpec {
        mode_partition: Region::split(vec![1.0], 0.0).to_vec(),
        ..DiagnosticsSpec::default()
    }
}

/// The two-mode instance at a given rate, without checkpoints.
pub fn two_mode(name: &str, rate: f64, chains: usize, seed: u64) -> ExperimentConfig {
    let (prior, r) = two_mode_prior();
    let sampler = SamplerConfig::new(rate, 2000, 2.0, chains, seed).with_step_size(1e-3);
    sampling(name, prior, r, sampler, halves())
}

pub fn experiment(name: &str) -> Result<ExperimentConfig, CliError> {
    let cfg = match name {
        "gaussian-identity" => {
            let prior = GaussianMixture::standard(1);
            let r = QuadraticPotential::new(vec![vec![0.0]], vec![0.0], 1.0).expect("valid potential");
            let sampler = SamplerConfig::new(4.0, 2000, 2.0, 20_000, 1)
                .with_step_size(1e-3)
                .with_checkpoints(vec![1.0], Default::default());
            sampling(name, prior, r, sampler, DiagnosticsSpec::default())
        }
        "two-mode" => {
            let mut cfg = two_mode(name, 64.0, 100_000, 1);
            if let Experiment::PosteriorSampling(s) = &mut cfg.experiment {
                s.sampler.checkpoint_times = vec![0.5, 1.0];
            }
            cfg
        }
        "appendixF-l3" => {
            let (prior, r) = flipped_instance(3.0).expect("valid instance");
            let sampler = SamplerConfig::new(64.0, 2000, 2.0, 10_000, 1)
                .with_step_size(1e-2)
                .with_checkpoints(vec![1.0], Default::default());
            sampling(name, prior, r, sampler, halves())
        }
        "flipped-pair" => ExperimentConfig {
            name: name.to_string(),
            output_root: None,
            experiment: Experiment::FlippedPair(FlippedPairExperiment {
                separations: vec![3.0, 4.0],
            }),
        },
        "lsi-incomparability" => ExperimentConfig {
            name: name.to_string(),
            output_root: None,
            experiment: Experiment::Lsi(LsiExperiment {
                segment_separations: vec![2.0, 3.0],
                u_shape_separations: vec![3.0],
                thickness: DEFAULT_THICKNESS,
            }),
        },
        _ if SUITE_PRESETS.contains(&name) => {
            return Err(CliError::config("preset", format!("`{name}` is a suite; use the suite command")));
        }
        _ => return Err(unknown(name)),
    };
    Ok(cfg)
}

pub fn suite(name: &str) -> Result<SuiteConfig, CliError> {
    match name {
        "kappa-sweep" => {
            let mut members = Vec::new();
            for rate in SWEEP_RATES {
                for seed in SWEEP_SEEDS {
                    let member = format!("kappa-{rate}-seed-{seed}");
                    members.push(SuiteMember {
                        name: Some(member.clone()),
                        source: MemberSource::Config(two_mode(&member, rate, SWEEP_CHAINS, seed)),
                        overrides: Overrides::default(),
                    });
                }
            }
            Ok(SuiteConfig {
                name: name.to_string(),
                output_root: None,
                members,
            })
        }
        _ if PRESETS.iter().any(|(n, _)| *n == name) => Err(CliError::config(
            "preset",
            format!("`{name}` is a single experiment; use the run command"),
        )),
        _ => Err(unknown(name)),
    }
}

/// Pretty JSON of any preset.
pub fn show(name: &str) -> Result<String, CliError> {
    let text = if SUITE_PRESETS.contains(&name) {
        serde_json::to_string_pretty(&suite(name)?)
    } else {
        serde_json::to_string_pretty(&experiment(name)?)
    };
    text.map_err(|e| CliError::Failed(e.to_string()))
}
