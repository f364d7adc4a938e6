//! Warm-start and annealed Langevin Monte Carlo.
//!
//! A run has two phases:
//!
//! 1. **Warm start.** Each chain starts from `γ` and runs `T` steps of LMC
//!    toward `μ_∞ ∝ γ e^{-R}`:
//!    `z ← z - h (z + ∇R(z)) + √(2h) η`.
//! 2. **Annealing.** Starting at index `i = T_ws κ/δ` and counting down to
//!    `τ κ/δ`, each step uses the score of the smoothed prior at target time
//!    `iδ/κ`:
//!    `x ← x + δ (∇log p_{iδ/κ}(x) - ∇R(x)) + √(2δ) η`.
//!
//! The iterate with index `i` is associated with target `μ_{iδ/κ}`; batches
//! are tagged with that index and time.
//!
//! Chains are independent and draw from per-chain counter-based streams
//! (see [`crate::rng`]), so output is invariant to the degree of parallelism.

use std::io::{BufRead, Write};
use std::time::Instant;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{check_dim, Error, Result};
use crate::likelihood::QuadraticPotential;
use crate::linalg;
use crate::mixture::GaussianMixture;
use crate::rng::{Phase, RngStreams};

/// Any coordinate beyond this magnitude aborts the run.
pub const BLOWUP_LIMIT: f64 = 1e8;
/// Accuracy used by the default warm-start step size `ε²/(β·cond·d)`.
pub const WARM_START_EPSILON: f64 = 0.1;
const CHUNK: usize = 1024;

/// How checkpoint batches are materialized.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CheckpointMode {
    /// The iterate itself.
    #[default]
    Instant,
    /// Pool points along the continuous interpolation of the step that
    /// produced the iterate, approximating the time-averaged law over it.
    Averaged,
}

fn default_averaging_points() -> usize {
    4
}

/// Knobs of the two-phase sampler.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerConfig {
    /// Slow-down factor `κ ≥ 1`.
    pub rate: f64,
    /// Annealing step `δ`; defaults to `κ^{-1/4}`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step_size: Option<f64>,
    /// Warm-start iterations `T`.
    pub warm_up_iters: u64,
    /// Target time `T_ws` at which annealing begins.
    pub warm_start_time: f64,
    /// Target time `τ` at which annealing halts; defaults to
    /// `(T_ws κ/δ)^{3/4} δ/κ`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stop_time: Option<f64>,
    /// Warm-start step `h`; defaults to `ε²/(β·cond·d)` with `ε = 0.1`,
    /// `β = 1 + λ_max(∇²R)` and `cond = β/(1 + λ_min(∇²R))`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warm_start_step_size: Option<f64>,
    pub chains: usize,
    pub seed: u64,
    /// Ascending target times in `[τ, T_ws]` at which to emit batches.
    #[serde(default)]
    pub checkpoint_times: Vec<f64>,
    #[serde(default)]
    pub checkpoint_mode: CheckpointMode,
    #[serde(default = "default_averaging_points")]
    pub averaging_points: usize,
}

impl SamplerConfig {
    /// Config with every optional knob at its default.
    pub fn new(rate: f64, warm_up_iters: u64, warm_start_time: f64, chains: usize, seed: u64) -> Self {
        SamplerConfig {
            rate,
            step_size: None,
            warm_up_iters,
            warm_start_time,
            stop_time: None,
            warm_start_step_size: None,
            chains,
            seed,
            checkpoint_times: Vec::new(),
            checkpoint_mode: CheckpointMode::Instant,
            averaging_points: default_averaging_points(),
        }
    }

    pub fn with_step_size(mut self, delta: f64) -> Self {
        self.step_size = Some(delta);
        self
    }

    pub fn with_stop_time(mut self, tau: f64) -> Self {
        self.stop_time = Some(tau);
        self
    }

    pub fn with_warm_start_step_size(mut self, h: f64) -> Self {
        self.warm_start_step_size = Some(h);
        self
    }

    pub fn with_checkpoints(mut self, times: Vec<f64>, mode: CheckpointMode) -> Self {
        self.checkpoint_times = times;
        self.checkpoint_mode = mode;
        self
    }

    pub fn step_size(&self) -> f64 {
        self.step_size.unwrap_or_else(|| self.rate.powf(-0.25))
    }

    pub fn stop_time(&self) -> f64 {
        self.stop_time.unwrap_or_else(|| {
            let delta = self.step_size();
            let iters = self.warm_start_time * self.rate / delta;
            iters.powf(0.75) * delta / self.rate
        })
    }

    pub fn warm_start_step_size(&self, potential: &QuadraticPotential) -> f64 {
        self.warm_start_step_size.unwrap_or_else(|| {
            let (lo, hi) = potential.curvature_bounds();
            let beta = 1.0 + hi;
            let cond = beta / (1.0 + lo);
            WARM_START_EPSILON * WARM_START_EPSILON / (beta * cond * potential.dim() as f64)
        })
    }

    /// Index bookkeeping for the annealing phase.
    pub fn schedule(&self) -> AnnealSchedule {
        let delta = self.step_size();
        let per_time = self.rate / delta;
        let start = (self.warm_start_time * per_time).round() as u64;
        let stop = ((self.stop_time() * per_time).round() as u64).min(start);
        AnnealSchedule {
            start_index: start,
            stop_index: stop,
            step_size: delta,
            rate: self.rate,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite_pos = |v: f64| v.is_finite() && v > 0.0;
        if !(self.rate.is_finite() && self.rate >= 1.0) {
            return Err(Error::config("rate", format!("must be finite and >= 1, got {}", self.rate)));
        }
        if !finite_pos(self.step_size()) {
            return Err(Error::config("step_size", format!("must be positive, got {}", self.step_size())));
        }
        if let Some(h) = self.warm_start_step_size {
            if !finite_pos(h) {
                return Err(Error::config("warm_start_step_size", format!("must be positive, got {h}")));
            }
        }
        if self.warm_up_iters == 0 {
            return Err(Error::config("warm_up_iters", "must be at least 1"));
        }
        if !finite_pos(self.warm_start_time) {
            return Err(Error::config(
                "warm_start_time",
                format!("must be positive, got {}", self.warm_start_time),
            ));
        }
        let tau = self.stop_time();
        if !(tau.is_finite() && tau >= 0.0 && tau <= self.warm_start_time) {
            return Err(Error::config(
                "stop_time",
                format!("must lie in [0, warm_start_time], got {tau}"),
            ));
        }
        if self.chains == 0 {
            return Err(Error::config("chains", "must be at least 1"));
        }
        if self.averaging_points == 0 {
            return Err(Error::config("averaging_points", "must be at least 1"));
        }
        let slack = 1e-12 * self.warm_start_time.max(1.0);
        for (i, &c) in self.checkpoint_times.iter().enumerate() {
            if !(c >= tau - slack && c <= self.warm_start_time + slack) {
                return Err(Error::config(
                    "checkpoint_times",
                    format!("{c} lies outside [stop_time, warm_start_time] = [{tau}, {}]", self.warm_start_time),
                ));
            }
            if i > 0 && c < self.checkpoint_times[i - 1] {
                return Err(Error::config("checkpoint_times", "must be sorted ascending"));
            }
        }
        Ok(())
    }
}

/// Annealing indices: the step leaving index `i` targets time `iδ/κ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnnealSchedule {
    pub start_index: u64,
    pub stop_index: u64,
    pub step_size: f64,
    pub rate: f64,
}

impl AnnealSchedule {
    pub fn target_time(&self, index: u64) -> f64 {
        index as f64 * self.step_size / self.rate
    }

    pub fn iterations(&self) -> u64 {
        self.start_index - self.stop_index
    }

    pub fn index_of(&self, time: f64) -> u64 {
        ((time * self.rate / self.step_size).round() as u64).clamp(self.stop_index, self.start_index)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChainState {
    pub position: Vec<f64>,
    pub algorithm_iter: u64,
    pub target_time: f64,
}

/// Samples from all chains at one target time.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleBatch {
    pub dim: usize,
    /// Row-major, one row per sample.
    pub samples: Vec<f64>,
    pub target_time: f64,
    pub algorithm_iter: u64,
    pub config_hash: String,
    pub seed: u64,
    pub averaged: bool,
}

impl SampleBatch {
    /// Wraps raw row-major samples.
    pub fn from_samples(dim: usize, samples: Vec<f64>, target_time: f64) -> Result<Self> {
        if dim == 0 || samples.len() % dim != 0 {
            return Err(Error::Input("sample buffer length is not a multiple of dim".into()));
        }
        Ok(SampleBatch {
            dim,
            samples,
            target_time,
            algorithm_iter: 0,
            config_hash: String::new(),
            seed: 0,
            averaged: false,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.samples.chunks_exact(self.dim)
    }

    pub fn coordinate(&self, axis: usize) -> Vec<f64> {
        self.rows().map(|r| r[axis]).collect()
    }

    pub fn mean(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.dim];
        for r in self.rows() {
            for (a, b) in m.iter_mut().zip(r) {
                *a += b;
            }
        }
        let n = self.len() as f64;
        m.iter_mut().for_each(|v| *v /= n);
        m
    }

    /// Per-coordinate unbiased sample variances.
    pub fn variance(&self) -> Vec<f64> {
        let m = self.mean();
        let mut v = vec![0.0; self.dim];
        for r in self.rows() {
            for i in 0..self.dim {
                v[i] += (r[i] - m[i]).powi(2);
            }
        }
        let n = self.len() as f64;
        v.iter_mut().for_each(|x| *x /= n - 1.0);
        v
    }

    /// CSV with `#`-prefixed metadata lines, then `x_1..x_d` header and rows.
    pub fn write_csv<W: Write>(&self, mut w: W, extra_meta: &[(&str, String)]) -> std::io::Result<()> {
        writeln!(w, "# seed={}", self.seed)?;
        writeln!(w, "# target_time={}", self.target_time)?;
        writeln!(w, "# algorithm_iter={}", self.algorithm_iter)?;
        writeln!(w, "# averaged={}", self.averaged)?;
        writeln!(w, "# config_hash={}", self.config_hash)?;
        for (k, v) in extra_meta {
            writeln!(w, "# {k}={v}")?;
        }
        let mut csv = csv::Writer::from_writer(w);
        csv.write_record((1..=self.dim).map(|i| format!("x_{i}")))?;
        for row in self.rows() {
            csv.write_record(row.iter().map(|v| v.to_string()))?;
        }
        csv.flush()
    }

    /// Reads a batch written by [`SampleBatch::write_csv`].
    pub fn read_csv<R: BufRead>(reader: R) -> Result<(Self, Vec<(String, String)>)> {
        let mut meta = Vec::new();
        let mut body = String::new();
        for line in reader.lines() {
            let line = line.map_err(|e| Error::Input(e.to_string()))?;
            match line.strip_prefix('#') {
                Some(m) => {
                    let (k, v) = m.trim().split_once('=').unwrap_or((m.trim(), ""));
                    meta.push((k.to_string(), v.to_string()));
                }
                None => {
                    body.push_str(&line);
                    body.push('\n');
                }
            }
        }
        let mut rdr = csv::Reader::from_reader(body.as_bytes());
        let dim = rdr.headers().map_err(|e| Error::Input(e.to_string()))?.len();
        let mut samples = Vec::new();
        for rec in rdr.records() {
            let rec = rec.map_err(|e| Error::Input(e.to_string()))?;
            for field in rec.iter() {
                samples.push(field.parse::<f64>().map_err(|e| Error::Input(e.to_string()))?);
            }
        }
        let get = |k: &str| meta.iter().find(|(mk, _)| mk == k).map(|(_, v)| v.clone());
        let mut batch = SampleBatch::from_samples(dim, samples, 0.0)?;
        batch.target_time = get("target_time").and_then(|v| v.parse().ok()).unwrap_or(f64::NAN);
        batch.algorithm_iter = get("algorithm_iter").and_then(|v| v.parse().ok()).unwrap_or(0);
        batch.seed = get("seed").and_then(|v| v.parse().ok()).unwrap_or(0);
        batch.averaged = get("averaged").is_some_and(|v| v == "true");
        batch.config_hash = get("config_hash").unwrap_or_default();
        Ok((batch, meta))
    }
}

/// Timing and iteration count for one phase.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseReport {
    pub name: String,
    pub iterations: u64,
    pub wall_clock_secs: f64,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub final_batch: SampleBatch,
    pub checkpoints: Vec<SampleBatch>,
    pub phases: Vec<PhaseReport>,
}

/// Hex SHA-256 of the JSON encoding of `value`.
pub fn json_digest<T: Serialize + ?Sized>(value: &T) -> Result<String> {
    let bytes = serde_json::to_vec(value)?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Digest identifying a `(prior, potential, config)` triple.
pub fn run_digest(prior: &GaussianMixture, potential: &QuadraticPotential, cfg: &SamplerConfig) -> Result<String> {
    json_digest(&(prior, potential, cfg))
}

/// `x + δ·drift + √(2δ)·noise`.
///
/// Fails if the drift is not finite, reporting `iteration`.
pub fn lmc_step(x: &[f64], drift: &[f64], step: f64, noise: &[f64], iteration: u64) -> Result<Vec<f64>> {
    check_dim(x.len(), drift.len())?;
    check_dim(x.len(), noise.len())?;
    if let Some(bad) = drift.iter().find(|v| !v.is_finite()) {
        return Err(Error::NumericalBlowup {
            phase: "lmc",
            chain: None,
            iteration,
            iterate: x.to_vec(),
            detail: format!("non-finite drift component {bad}"),
        });
    }
    let scale = (2.0 * step).sqrt();
    Ok(x.iter()
        .zip(drift)
        .zip(noise)
        .map(|((xi, di), ni)| xi + step * di + scale * ni)
        .collect())
}

/// Smoothed-prior score evaluator reused across steps without allocation.
pub(crate) struct ScoreField {
    dim: usize,
    log_weights: Vec<f64>,
    base_means: Vec<f64>,
    base_covs: Vec<f64>,
    log_coef: Vec<f64>,
    means: Vec<f64>,
    precisions: Vec<f64>,
}

impl ScoreField {
    pub(crate) fn new(prior: &GaussianMixture) -> Self {
        let d = prior.dim();
        let k = prior.components().len();
        let mut base_means = Vec::with_capacity(k * d);
        let mut base_covs = Vec::with_capacity(k * d * d);
        for c in prior.components() {
            base_means.extend_from_slice(c.mean());
            base_covs.extend_from_slice(c.cov());
        }
        let mut field = ScoreField {
            dim: d,
            log_weights: prior.weights().iter().map(|w| w.ln()).collect(),
            base_means,
            base_covs,
            log_coef: vec![0.0; k],
            means: vec![0.0; k * d],
            precisions: vec![0.0; k * d * d],
        };
        field.set_time(0.0);
        field
    }

    fn components(&self) -> usize {
        self.log_weights.len()
    }

    /// Prepares `∇log p_t`.
    pub(crate) fn set_time(&mut self, t: f64) {
        let d = self.dim;
        let a = (-t).exp();
        let a2 = a * a;
        let mut cov = vec![0.0; d * d];
        for i in 0..self.components() {
            for j in 0..d {
                self.means[i * d + j] = a * self.base_means[i * d + j];
            }
            for (c, s) in cov.iter_mut().zip(&self.base_covs[i * d * d..(i + 1) * d * d]) {
                *c = a2 * s;
            }
            for j in 0..d {
                cov[j * d + j] += 1.0 - a2;
            }
            let ok = linalg::cholesky_in_place(&mut cov, d);
            debug_assert!(ok, "smoothed covariance stays SPD");
            linalg::chol_inverse(&cov, d, &mut self.precisions[i * d * d..(i + 1) * d * d]);
            self.log_coef[i] = self.log_weights[i] - 0.5 * linalg::chol_log_det(&cov, d);
        }
    }

    /// Writes the score at `x` into `out`; `scratch` needs `k·(d + 1)` slots.
    #[inline]
    pub(crate) fn score_into(&self, x: &[f64], out: &mut [f64], scratch: &mut [f64]) {
        let d = self.dim;
        if d == 1 {
            out[0] = self.score_1d(x[0]);
            return;
        }
        let k = self.components();
        let (logits, grads) = scratch.split_at_mut(k);
        let mut max = f64::NEG_INFINITY;
        for i in 0..k {
            let p = &self.precisions[i * d * d..(i + 1) * d * d];
            let m = &self.means[i * d..(i + 1) * d];
            let g = &mut grads[i * d..(i + 1) * d];
            let mut quad = 0.0;
            for r in 0..d {
                let mut acc = 0.0;
                for c in 0..d {
                    acc += p[r * d + c] * (m[c] - x[c]);
                }
                g[r] = acc;
                quad += acc * (m[r] - x[r]);
            }
            let l = self.log_coef[i] - 0.5 * quad;
            logits[i] = l;
            max = max.max(l);
        }
        out.iter_mut().for_each(|o| *o = 0.0);
        let mut total = 0.0;
        for i in 0..k {
            let w = (logits[i] - max).exp();
            total += w;
            for j in 0..d {
                out[j] += w * grads[i * d + j];
            }
        }
        let inv = 1.0 / total;
        out.iter_mut().for_each(|o| *o *= inv);
    }

    /// Univariate score, skipping the exponential of the dominant component.
    #[inline]
    pub(crate) fn score_1d(&self, x: f64) -> f64 {
        let k = self.components();
        if k == 2 {
            let g0 = self.precisions[0] * (self.means[0] - x);
            let g1 = self.precisions[1] * (self.means[1] - x);
            let l0 = self.log_coef[0] - 0.5 * g0 * (self.means[0] - x);
            let l1 = self.log_coef[1] - 0.5 * g1 * (self.means[1] - x);
            let (w, top, other) = if l0 >= l1 { ((l1 - l0).exp(), g0, g1) } else { ((l0 - l1).exp(), g1, g0) };
            return (top + w * other) / (1.0 + w);
        }
        let mut max = f64::NEG_INFINITY;
        for i in 0..k {
            let diff = self.means[i] - x;
            max = max.max(self.log_coef[i] - 0.5 * self.precisions[i] * diff * diff);
        }
        let (mut num, mut den) = (0.0, 0.0);
        for i in 0..k {
            let diff = self.means[i] - x;
            let w = (self.log_coef[i] - 0.5 * self.precisions[i] * diff * diff - max).exp();
            num += w * self.precisions[i] * diff;
            den += w;
        }
        num / den
    }

    fn scratch_len(&self) -> usize {
        self.components() * (self.dim + 1)
    }
}

#[inline]
fn fill_normal(rng: &mut ChaCha8Rng, out: &mut [f64]) {
    for v in out.iter_mut() {
        *v = rng.sample(StandardNormal);
    }
}

fn guard(x: &[f64], phase: &'static str, chain: usize, iteration: u64) -> Result<()> {
    match x.iter().find(|v| !(v.abs() <= BLOWUP_LIMIT)) {
        None => Ok(()),
        Some(v) => Err(Error::NumericalBlowup {
            phase,
            chain: Some(chain),
            iteration,
            iterate: x.to_vec(),
            detail: format!("coordinate reached {v:e} (limit {BLOWUP_LIMIT:e})"),
        }),
    }
}

fn first_error<T>(results: Vec<Result<T>>) -> Result<Vec<T>> {
    results.into_iter().collect()
}

/// Runs the warm-start phase and returns chains positioned at `T_ws`.
pub fn warm_start(potential: &QuadraticPotential, cfg: &SamplerConfig) -> Result<Vec<ChainState>> {
    cfg.validate()?;
    let d = potential.dim();
    let h = cfg.warm_start_step_size(potential);
    let scale = (2.0 * h).sqrt();
    let streams = RngStreams::new(cfg.seed);
    let sched = cfg.schedule();
    let start_time = sched.target_time(sched.start_index);

    let chunks: Vec<usize> = (0..cfg.chains).step_by(CHUNK).collect();
    let results: Vec<Result<Vec<ChainState>>> = chunks
        .par_iter()
        .map(|&first| {
            let last = (first + CHUNK).min(cfg.chains);
            let mut states = Vec::with_capacity(last - first);
            let mut grad = vec![0.0; d];
            let mut noise = vec![0.0; d];
            for chain in first..last {
                let mut rng = streams.stream(chain, Phase::WarmStart);
                let mut x = vec![0.0; d];
                fill_normal(&mut rng, &mut x);
                for iter in 1..=cfg.warm_up_iters {
                    potential.grad_into(&x, &mut grad);
                    fill_normal(&mut rng, &mut noise);
                    for j in 0..d {
                        x[j] += -h * (x[j] + grad[j]) + scale * noise[j];
                    }
                    guard(&x, "warm_start", chain, iter)?;
                }
                states.push(ChainState {
                    position: x,
                    algorithm_iter: sched.start_index,
                    target_time: start_time,
                });
            }
            Ok(states)
        })
        .collect();
    Ok(first_error(results)?.into_iter().flatten().collect())
}

struct CheckpointPlan {
    index: u64,
    averaged: bool,
}

fn plan_checkpoints(cfg: &SamplerConfig, sched: &AnnealSchedule) -> Vec<CheckpointPlan> {
    let mut plans: Vec<CheckpointPlan> = cfg
        .checkpoint_times
        .iter()
        .map(|&t| {
            let index = sched.index_of(t);
            CheckpointPlan {
                index,
                // the first annealing iterate has no preceding step to average over
                averaged: cfg.checkpoint_mode == CheckpointMode::Averaged && index < sched.start_index,
            }
        })
        .collect();
    // emission order: descending index
    plans.reverse();
    plans
}

/// Runs the annealing phase from warm-started chains.
///
/// Returns one batch per requested checkpoint (in emission order, i.e.
/// decreasing target time) followed by the final batch at `τ`.
pub fn anneal(
    chains: &[ChainState],
    prior: &GaussianMixture,
    potential: &QuadraticPotential,
    cfg: &SamplerConfig,
) -> Result<Vec<SampleBatch>> {
    cfg.validate()?;
    check_dim(prior.dim(), potential.dim())?;
    let d = prior.dim();
    let sched = cfg.schedule();
    if chains.iter().any(|c| c.position.len() != d) {
        return Err(Error::DimensionMismatch {
            expected: d,
            found: chains.iter().find(|c| c.position.len() != d).map_or(0, |c| c.position.len()),
        });
    }
    if chains.iter().any(|c| c.algorithm_iter != sched.start_index) {
        return Err(Error::Input(format!(
            "chains must be positioned at the warm-start index {}",
            sched.start_index
        )));
    }
    let plans = plan_checkpoints(cfg, &sched);
    let hash = run_digest(prior, potential, cfg)?;
    let streams = RngStreams::new(cfg.seed);
    let delta = sched.step_size;
    let scale = (2.0 * delta).sqrt();
    let m_avg = cfg.averaging_points;

    let chunk_starts: Vec<usize> = (0..chains.len()).step_by(CHUNK).collect();
    // per chunk: one buffer per checkpoint plan plus one for the final iterate
    let results: Vec<Result<Vec<Vec<f64>>>> = chunk_starts
        .par_iter()
        .map(|&first| {
            let last = (first + CHUNK).min(chains.len());
            let n = last - first;
            let mut pos: Vec<f64> = chains[first..last].iter().flat_map(|c| c.position.iter().copied()).collect();
            let mut rngs: Vec<ChaCha8Rng> = (first..last).map(|c| streams.stream(c, Phase::Anneal)).collect();
            let mut aux: Vec<ChaCha8Rng> = (first..last).map(|c| streams.stream(c, Phase::Averaging)).collect();
            let mut out: Vec<Vec<f64>> = plans
                .iter()
                .map(|p| Vec::with_capacity(n * d * if p.averaged { m_avg } else { 1 }))
                .collect();
            let mut field = ScoreField::new(prior);
            let mut scratch = vec![0.0; field.scratch_len()];
            let mut drift = vec![0.0; d];
            let mut noise = vec![0.0; d];
            let mut extra = vec![0.0; d];
            let mut next_plan = 0;

            // checkpoints at the starting index
            while next_plan < plans.len() && plans[next_plan].index == sched.start_index {
                out[next_plan].extend_from_slice(&pos);
                next_plan += 1;
            }
            for i in ((sched.stop_index + 1)..=sched.start_index).rev() {
                field.set_time(sched.target_time(i));
                let lands_on = plans[next_plan..]
                    .iter()
                    .take_while(|p| p.index == i - 1)
                    .count();
                let averaging = plans[next_plan..next_plan + lands_on].iter().any(|p| p.averaged);
                if d == 1 && !averaging {
                    let (h, b) = (potential.hessian()[0], potential.linear_term()[0]);
                    for (c, (x, rng)) in pos.iter_mut().zip(rngs.iter_mut()).enumerate() {
                        let drift = field.score_1d(*x) - (h * *x - b);
                        let eta: f64 = rng.sample(StandardNormal);
                        *x += delta * drift + scale * eta;
                        if !(x.abs() <= BLOWUP_LIMIT) {
                            guard(std::slice::from_ref(x), "anneal", first + c, sched.start_index - i + 1)?;
                        }
                    }
                    for p in 0..lands_on {
                        out[next_plan + p].extend_from_slice(&pos);
                    }
                    next_plan += lands_on;
                    continue;
                }
                for c in 0..n {
                    let x = &mut pos[c * d..(c + 1) * d];
                    field.score_into(x, &mut drift, &mut scratch);
                    potential.subtract_grad(x, &mut drift);
                    fill_normal(&mut rngs[c], &mut noise);
                    if averaging {
                        // Brownian-bridge interpolants of this step at u = j/M, j < M
                        for j in 1..m_avg {
                            let u = j as f64 / m_avg as f64;
                            fill_normal(&mut aux[c], &mut extra);
                            let bridge = (u * (1.0 - u)).sqrt();
                            for p in plans[next_plan..next_plan + lands_on].iter().enumerate().filter(|(_, p)| p.averaged) {
                                let buf = &mut out[next_plan + p.0];
                                for k in 0..d {
                                    buf.push(x[k] + u * delta * drift[k] + scale * (u * noise[k] + bridge * extra[k]));
                                }
                            }
                        }
                    }
                    for k in 0..d {
                        x[k] += delta * drift[k] + scale * noise[k];
                    }
                    guard(x, "anneal", first + c, sched.start_index - i + 1)?;
                }
                for p in 0..lands_on {
                    out[next_plan + p].extend_from_slice(&pos);
                }
                next_plan += lands_on;
            }
            out.push(pos);
            Ok(out)
        })
        .collect();
    let per_chunk = first_error(results)?;

    let mut batches = Vec::with_capacity(plans.len() + 1);
    let indices: Vec<(u64, bool)> = plans
        .iter()
        .map(|p| (p.index, p.averaged))
        .chain(std::iter::once((sched.stop_index, false)))
        .collect();
    for (slot, &(index, averaged)) in indices.iter().enumerate() {
        let samples: Vec<f64> = per_chunk.iter().flat_map(|c| c[slot].iter().copied()).collect();
        batches.push(SampleBatch {
            dim: d,
            samples,
            target_time: sched.target_time(index),
            algorithm_iter: index,
            config_hash: hash.clone(),
            seed: cfg.seed,
            averaged,
        });
    }
    Ok(batches)
}

/// Warm start followed by annealing.
pub fn run_algorithm(prior: &GaussianMixture, potential: &QuadraticPotential, cfg: &SamplerConfig) -> Result<RunOutput> {
    cfg.validate()?;
    check_dim(prior.dim(), potential.dim())?;
    let started = Instant::now();
    let chains = warm_start(potential, cfg)?;
    let warm = PhaseReport {
        name: "warm_start".into(),
        iterations: cfg.warm_up_iters,
        wall_clock_secs: started.elapsed().as_secs_f64(),
    };
    let started = Instant::now();
    let mut batches = anneal(&chains, prior, potential, cfg)?;
    let annealing = PhaseReport {
        name: "anneal".into(),
        iterations: cfg.schedule().iterations(),
        wall_clock_secs: started.elapsed().as_secs_f64(),
    };
    let final_batch = batches.pop().expect("anneal always emits the final batch");
    Ok(RunOutput {
        final_batch,
        checkpoints: batches,
        phases: vec![warm, annealing],
    })
}
