//! Closed-form Gaussian-mixture machinery.
//!
//! A [`GaussianMixture`] is the prior `p`, its Ornstein–Uhlenbeck smoothing
//! `p_t`, and every tilted posterior `μ_t ∝ p_t e^{-R}`: all of these stay in
//! the mixture family, so densities, scores, time derivatives and
//! conditional means are available exactly.
//!
//! All evaluations go through log-sum-exp with a max shift, and per-component
//! responsibilities are formed in log space so that well separated components
//! do not underflow.

use std::f64::consts::PI;

use nalgebra::DVector;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{check_dim, Error, Result};
use crate::likelihood::QuadraticPotential;
use crate::linalg;

/// Smallest admissible covariance eigenvalue.
pub const MIN_EIGENVALUE: f64 = 1e-12;
const WEIGHT_SUM_TOL: f64 = 1e-12;
const SYMMETRY_TOL: f64 = 1e-12;

/// OU time `t ≥ 0`. `t = 0` is the raw prior.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct SmoothTime(f64);

impl SmoothTime {
    pub const ZERO: SmoothTime = SmoothTime(0.0);

    pub fn new(t: f64) -> Result<Self> {
        if t.is_finite() && t >= 0.0 {
            Ok(SmoothTime(t))
        } else {
            Err(Error::Domain(format!("smoothing time must be finite and >= 0, got {t}")))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }

    fn positive(self, op: &str) -> Result<f64> {
        if self.0 > 0.0 {
            Ok(self.0)
        } else {
            Err(Error::Domain(format!("{op} requires t > 0")))
        }
    }
}

impl TryFrom<f64> for SmoothTime {
    type Error = Error;
    fn try_from(t: f64) -> Result<Self> {
        SmoothTime::new(t)
    }
}

impl From<SmoothTime> for f64 {
    fn from(t: SmoothTime) -> f64 {
        t.0
    }
}

/// One weighted Gaussian with its cached factorization.
#[derive(Debug, Clone)]
pub struct Component {
    weight: f64,
    mean: Vec<f64>,
    cov: Vec<f64>,
    chol: Vec<f64>,
    precision: Vec<f64>,
    /// `-d/2 log 2π - 1/2 log det Σ`
    log_norm: f64,
}

impl Component {
    fn new(weight: f64, mean: Vec<f64>, cov: Vec<f64>) -> Result<Self> {
        let d = mean.len();
        if cov.len() != d * d {
            return Err(Error::InvalidMixture(format!(
                "covariance has {} entries, expected {}",
                cov.len(),
                d * d
            )));
        }
        if !(weight.is_finite() && weight > 0.0) {
            return Err(Error::InvalidMixture(format!("weight must be positive, got {weight}")));
        }
        if mean.iter().chain(cov.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidMixture("non-finite mean or covariance entry".into()));
        }
        for i in 0..d {
            for j in (i + 1)..d {
                let (a, b) = (cov[i * d + j], cov[j * d + i]);
                if (a - b).abs() > SYMMETRY_TOL * a.abs().max(b.abs()).max(1.0) {
                    return Err(Error::InvalidMixture(format!(
                        "covariance not symmetric at ({i},{j}): {a} vs {b}"
                    )));
                }
            }
        }
        let min_eig = linalg::sym_eigenvalues(&cov, d)[0];
        if !(min_eig > MIN_EIGENVALUE) {
            return Err(Error::InvalidMixture(format!(
                "covariance minimum eigenvalue {min_eig:e} is below {MIN_EIGENVALUE:e}"
            )));
        }
        let mut chol = cov.clone();
        if !linalg::cholesky_in_place(&mut chol, d) {
            return Err(Error::InvalidMixture("covariance is not positive definite".into()));
        }
        let mut precision = vec![0.0; d * d];
        linalg::chol_inverse(&chol, d, &mut precision);
        let log_norm = -0.5 * d as f64 * (2.0 * PI).ln() - 0.5 * linalg::chol_log_det(&chol, d);
        Ok(Component {
            weight,
            mean,
            cov,
            chol,
            precision,
            log_norm,
        })
    }

    pub fn weight(&self) -> f64 {
        self.weight
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    /// Row-major covariance.
    pub fn cov(&self) -> &[f64] {
        &self.cov
    }

    /// Row-major inverse covariance.
    pub fn precision(&self) -> &[f64] {
        &self.precision
    }

    fn dim(&self) -> usize {
        self.mean.len()
    }

    /// `log N(x; m, Σ)`, with `diff` receiving `Σ^{-1}(m - x)`.
    fn log_pdf_with_grad(&self, x: &[f64], diff: &mut [f64], grad: &mut [f64]) -> f64 {
        for ((g, m), xi) in diff.iter_mut().zip(&self.mean).zip(x) {
            *g = m - xi;
        }
        linalg::mat_vec(&self.precision, diff, grad);
        self.log_norm - 0.5 * linalg::dot(diff, grad)
    }

    fn log_pdf(&self, x: &[f64]) -> f64 {
        let d = self.dim();
        let mut z: Vec<f64> = x.iter().zip(&self.mean).map(|(a, b)| a - b).collect();
        linalg::forward_sub(&self.chol, d, &mut z);
        self.log_norm - 0.5 * linalg::dot(&z, &z)
    }
}

/// Weighted mixture of Gaussians on `ℝ^d`.
#[derive(Debug, Clone)]
pub struct GaussianMixture {
    dim: usize,
    components: Vec<Component>,
}

impl GaussianMixture {
    /// Builds a mixture from `(weight, mean, row-major covariance)` triples.
    ///
    /// Weights must be positive and sum to one within `1e-12`.
    pub fn new(dim: usize, components: Vec<(f64, Vec<f64>, Vec<f64>)>) -> Result<Self> {
        let total: f64 = components.iter().map(|c| c.0).sum();
        if (total - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(Error::InvalidMixture(format!("weights sum to {total}, expected 1")));
        }
        Self::build(dim, components)
    }

    /// Like [`GaussianMixture::new`] but renormalizes the supplied weights.
    pub fn normalized(dim: usize, components: Vec<(f64, Vec<f64>, Vec<f64>)>) -> Result<Self> {
        let total: f64 = components.iter().map(|c| c.0).sum();
        if !(total.is_finite() && total > 0.0) {
            return Err(Error::InvalidMixture(format!("weights sum to {total}")));
        }
        let comps = components
            .into_iter()
            .map(|(w, m, c)| (w / total, m, c))
            .collect();
        Self::build(dim, comps)
    }

    fn build(dim: usize, components: Vec<(f64, Vec<f64>, Vec<f64>)>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidMixture("dimension must be positive".into()));
        }
        if components.is_empty() {
            return Err(Error::InvalidMixture("mixture needs at least one component".into()));
        }
        let components = components
            .into_iter()
            .map(|(w, m, c)| {
                if m.len() != dim {
                    return Err(Error::InvalidMixture(format!(
                        "component mean has dimension {}, mixture has {dim}",
                        m.len()
                    )));
                }
                Component::new(w, m, c)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(GaussianMixture { dim, components })
    }

    /// Standard Gaussian `γ` on `ℝ^d`.
    pub fn standard(dim: usize) -> Self {
        Self::new(dim, vec![(1.0, vec![0.0; dim], identity(dim))]).expect("valid standard normal")
    }

    /// Univariate mixture from `(weight, mean, variance)` triples; weights are renormalized.
    pub fn univariate(components: &[(f64, f64, f64)]) -> Result<Self> {
        Self::normalized(
            1,
            components
                .iter()
                .map(|&(w, m, v)| (w, vec![m], vec![v]))
                .collect(),
        )
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn components(&self) -> &[Component] {
        &self.components
    }

    pub fn weights(&self) -> Vec<f64> {
        self.components.iter().map(|c| c.weight).collect()
    }

    /// `log p(x)`.
    pub fn log_density(&self, x: &[f64]) -> Result<f64> {
        check_dim(self.dim, x.len())?;
        Ok(self.log_density_unchecked(x))
    }

    pub(crate) fn log_density_unchecked(&self, x: &[f64]) -> f64 {
        if self.components.len() == 1 {
            return self.components[0].log_pdf(x);
        }
        let terms: Vec<f64> = self
            .components
            .iter()
            .map(|c| c.weight.ln() + c.log_pdf(x))
            .collect();
        linalg::log_sum_exp(&terms)
    }

    pub fn density(&self, x: &[f64]) -> Result<f64> {
        self.log_density(x).map(f64::exp)
    }

    /// Posterior component probabilities `r_i(x)`.
    pub fn responsibilities(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dim, x.len())?;
        let mut logs: Vec<f64> = self
            .components
            .iter()
            .map(|c| c.weight.ln() + c.log_pdf(x))
            .collect();
        let lse = linalg::log_sum_exp(&logs);
        logs.iter_mut().for_each(|l| *l = (*l - lse).exp());
        Ok(logs)
    }

    /// `∇ log p(x) = Σ_i r_i(x) Σ_i^{-1}(m_i - x)`.
    pub fn score(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dim, x.len())?;
        let mut out = vec![0.0; self.dim];
        self.score_unchecked(x, &mut out);
        Ok(out)
    }

    pub(crate) fn score_unchecked(&self, x: &[f64], out: &mut [f64]) -> f64 {
        let d = self.dim;
        let k = self.components.len();
        let mut diff = vec![0.0; d];
        let mut grads = vec![0.0; k * d];
        let mut logs = vec![0.0; k];
        for (i, c) in self.components.iter().enumerate() {
            logs[i] = c.weight.ln() + c.log_pdf_with_grad(x, &mut diff, &mut grads[i * d..(i + 1) * d]);
        }
        let lse = linalg::log_sum_exp(&logs);
        out.iter_mut().for_each(|o| *o = 0.0);
        for i in 0..k {
            let r = (logs[i] - lse).exp();
            for j in 0..d {
                out[j] += r * grads[i * d + j];
            }
        }
        lse
    }

    /// Jacobian of the score, row-major `d x d`:
    /// `-Σ r_i P_i + Σ r_i g_i g_iᵀ - ḡḡᵀ` with `g_i = P_i(m_i - x)`.
    pub fn score_jacobian(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dim, x.len())?;
        let d = self.dim;
        let r = self.responsibilities(x)?;
        let mut diff = vec![0.0; d];
        let mut g = vec![0.0; d];
        let mut mean_g = vec![0.0; d];
        let mut jac = vec![0.0; d * d];
        for (c, &ri) in self.components.iter().zip(&r) {
            c.log_pdf_with_grad(x, &mut diff, &mut g);
            for a in 0..d {
                mean_g[a] += ri * g[a];
                for b in 0..d {
                    jac[a * d + b] += ri * (g[a] * g[b] - c.precision[a * d + b]);
                }
            }
        }
        for a in 0..d {
            for b in 0..d {
                jac[a * d + b] -= mean_g[a] * mean_g[b];
            }
        }
        Ok(jac)
    }

    /// Law at time `t` of the OU process `dX = -X dt + √2 dB` started from `p`:
    /// components `(w_i, e^{-t} m_i, e^{-2t} Σ_i + (1 - e^{-2t}) I)`.
    pub fn ou_smooth(&self, t: SmoothTime) -> GaussianMixture {
        if t.value() == 0.0 {
            return self.clone();
        }
        let a = (-t.value()).exp();
        let a2 = a * a;
        let d = self.dim;
        let comps = self
            .components
            .iter()
            .map(|c| {
                let mean = c.mean.iter().map(|m| a * m).collect();
                let mut cov: Vec<f64> = c.cov.iter().map(|s| a2 * s).collect();
                for i in 0..d {
                    cov[i * d + i] += 1.0 - a2;
                }
                (c.weight, mean, cov)
            })
            .collect();
        GaussianMixture::build(d, comps).expect("OU smoothing preserves positive definiteness")
    }

    /// `∂_t log p_t(x)` by differentiating the smoothed component parameters.
    ///
    /// With `m(t) = e^{-t}m`, `S(t) = e^{-2t}Σ + (1-e^{-2t})I` and `u = S^{-1}(x - m(t))`,
    /// each component contributes `-½ tr(S^{-1}Ṡ) + ½ uᵀṠu + uᵀṁ`.
    pub fn dt_log_density(&self, t: SmoothTime, x: &[f64]) -> Result<f64> {
        let t = t.positive("dt_log_density")?;
        check_dim(self.dim, x.len())?;
        let d = self.dim;
        let a2 = (-2.0 * t).exp();
        let smoothed = self.ou_smooth(SmoothTime(t));
        let r = smoothed.responsibilities(x)?;
        let mut total = 0.0;
        let mut diff = vec![0.0; d];
        let mut u = vec![0.0; d];
        let mut sdot_u = vec![0.0; d];
        for ((orig, sm), ri) in self.components.iter().zip(&smoothed.components).zip(&r) {
            // Ṡ = 2e^{-2t}(I - Σ), ṁ = -m(t)
            let sdot: Vec<f64> = (0..d * d)
                .map(|idx| {
                    let eye = if idx / d == idx % d { 1.0 } else { 0.0 };
                    2.0 * a2 * (eye - orig.cov[idx])
                })
                .collect();
            for ((df, xi), m) in diff.iter_mut().zip(x).zip(&sm.mean) {
                *df = xi - m;
            }
            linalg::mat_vec(&sm.precision, &diff, &mut u);
            let trace: f64 = (0..d)
                .map(|i| (0..d).map(|k| sm.precision[i * d + k] * sdot[k * d + i]).sum::<f64>())
                .sum();
            linalg::mat_vec(&sdot, &u, &mut sdot_u);
            let quad = linalg::dot(&u, &sdot_u);
            let drift: f64 = -linalg::dot(&u, &sm.mean);
            total += ri * (-0.5 * trace + 0.5 * quad + drift);
        }
        Ok(total)
    }

    /// `E[x₀ | e^{-t}x₀ + √(1-e^{-2t}) η = x_t]` for `x₀ ~ p`, `η ~ γ`.
    pub fn posterior_mean(&self, t: SmoothTime, x_t: &[f64]) -> Result<Vec<f64>> {
        let t = t.positive("posterior_mean")?;
        check_dim(self.dim, x_t.len())?;
        let d = self.dim;
        let a = (-t).exp();
        let s2 = -(-2.0 * t).exp_m1();
        let r = self.ou_smooth(SmoothTime(t)).responsibilities(x_t)?;
        let mut out = vec![0.0; d];
        for (c, ri) in self.components.iter().zip(&r) {
            let mut q = linalg::to_dmatrix(&c.precision, d, d);
            for i in 0..d {
                q[(i, i)] += a * a / s2;
            }
            let p = linalg::to_dmatrix(&c.precision, d, d);
            let rhs = &p * DVector::from_column_slice(&c.mean)
                + DVector::from_column_slice(x_t) * (a / s2);
            let m_post = q
                .cholesky()
                .ok_or_else(|| Error::Domain("posterior precision not SPD".into()))?
                .solve(&rhs);
            for j in 0..d {
                out[j] += ri * m_post[j];
            }
        }
        Ok(out)
    }

    /// Exact mixture proportional to `p(x) e^{-R(x)}`.
    ///
    /// Each component gains precision `AᵀA/σ²`, its mean moves to the
    /// conditioned mean, and its weight is multiplied by
    /// `∫ N(x; m_i, Σ_i) e^{-R(x)} dx` before renormalization.
    pub fn tilt(&self, potential: &QuadraticPotential) -> Result<GaussianMixture> {
        check_dim(self.dim, potential.dim())?;
        let d = self.dim;
        let h = linalg::to_dmatrix(potential.hessian(), d, d);
        let b = DVector::from_column_slice(potential.linear_term());
        let c0 = potential.constant_term();
        let mut log_weights = Vec::with_capacity(self.components.len());
        let mut params = Vec::with_capacity(self.components.len());
        for c in &self.components {
            let p = linalg::to_dmatrix(&c.precision, d, d);
            let m = DVector::from_column_slice(&c.mean);
            let p_new = &p + &h;
            let h_new = &p * &m + &b;
            let chol = p_new
                .clone()
                .cholesky()
                .ok_or_else(|| Error::Domain("tilted precision not SPD".into()))?;
            let mean_new = chol.solve(&h_new);
            let cov_new = chol.inverse();
            let cov_sym = (&cov_new + cov_new.transpose()) * 0.5;
            let log_det_p_new: f64 = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
            let log_det_cov = -2.0 * (c.log_norm + 0.5 * d as f64 * (2.0 * PI).ln());
            let log_factor = -0.5 * log_det_cov - 0.5 * log_det_p_new + 0.5 * h_new.dot(&mean_new)
                - 0.5 * m.dot(&(&p * &m))
                - c0;
            log_weights.push(c.weight.ln() + log_factor);
            params.push((mean_new.iter().copied().collect(), linalg::from_dmatrix(&cov_sym)));
        }
        let lse = linalg::log_sum_exp(&log_weights);
        let comps = log_weights
            .iter()
            .zip(params)
            .map(|(lw, (m, c))| ((lw - lse).exp(), m, c))
            .collect();
        GaussianMixture::normalized(d, comps)
    }

    /// Draws one sample into `out`.
    pub fn sample_into<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        let d = self.dim;
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut chosen = self.components.len() - 1;
        for (i, c) in self.components.iter().enumerate() {
            acc += c.weight;
            if u < acc {
                chosen = i;
                break;
            }
        }
        let c = &self.components[chosen];
        let z: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        for i in 0..d {
            out[i] = c.mean[i] + (0..=i).map(|k| c.chol[i * d + k] * z[k]).sum::<f64>();
        }
    }

    /// `n` independent draws, flattened row-major.
    pub fn sample_n<R: Rng + ?Sized>(&self, rng: &mut R, n: usize) -> Vec<f64> {
        let mut out = vec![0.0; n * self.dim];
        for chunk in out.chunks_exact_mut(self.dim) {
            self.sample_into(rng, chunk);
        }
        out
    }

    /// Mixture mean `Σ w_i m_i`.
    pub fn mean(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        for c in &self.components {
            for (o, m) in out.iter_mut().zip(&c.mean) {
                *o += c.weight * m;
            }
        }
        out
    }

    /// `E‖X‖² = Σ w_i (‖m_i‖² + tr Σ_i)`.
    pub fn second_moment(&self) -> f64 {
        let d = self.dim;
        self.components
            .iter()
            .map(|c| c.weight * (linalg::dot(&c.mean, &c.mean) + (0..d).map(|i| c.cov[i * d + i]).sum::<f64>()))
            .sum()
    }

    /// Per-axis bounding box `mean ± k·sd` over all components.
    pub fn bounding_box(&self, k: f64) -> Vec<(f64, f64)> {
        let d = self.dim;
        (0..d)
            .map(|axis| {
                self.components.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), c| {
                    let sd = c.cov[axis * d + axis].sqrt();
                    (lo.min(c.mean[axis] - k * sd), hi.max(c.mean[axis] + k * sd))
                })
            })
            .collect()
    }

    /// CDF of a univariate mixture.
    pub fn cdf_1d(&self, x: f64) -> Result<f64> {
        check_dim(1, self.dim)?;
        Ok(self
            .components
            .iter()
            .map(|c| c.weight * normal_cdf((x - c.mean[0]) / c.cov[0].sqrt()))
            .sum())
    }

    /// Quantile of a univariate mixture, by bracketed bisection on the CDF.
    pub fn quantile_1d(&self, q: f64) -> Result<f64> {
        check_dim(1, self.dim)?;
        if !(q > 0.0 && q < 1.0) {
            return Err(Error::Domain(format!("quantile level must be in (0,1), got {q}")));
        }
        let (mut lo, mut hi) = self.bounding_box(40.0)[0];
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if self.cdf_1d(mid)? < q {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo <= 1e-13 * mid.abs().max(1.0) {
                break;
            }
        }
        Ok(0.5 * (lo + hi))
    }
}

pub(crate) fn identity(d: usize) -> Vec<f64> {
    let mut m = vec![0.0; d * d];
    for i in 0..d {
        m[i * d + i] = 1.0;
    }
    m
}

pub(crate) fn normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

/// Regularity constants of a prior, each clamped to at least one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegularityConstants {
    pub m_subgaussian: f64,
    pub score_lipschitz: f64,
    pub dim: usize,
}

impl RegularityConstants {
    pub fn new(m_subgaussian: f64, score_lipschitz: f64, dim: usize) -> Result<Self> {
        if !(m_subgaussian >= 1.0 && score_lipschitz >= 1.0) {
            return Err(Error::Domain(format!(
                "regularity constants must be >= 1, got m={m_subgaussian}, L={score_lipschitz}"
            )));
        }
        Ok(RegularityConstants {
            m_subgaussian,
            score_lipschitz,
            dim,
        })
    }

    /// Subgaussian proxy `max_i ‖m_i‖ + max_i λ_max(Σ_i)`, floored at one.
    pub fn subgaussian_proxy(p: &GaussianMixture) -> f64 {
        let d = p.dim;
        let proxy = p
            .components
            .iter()
            .map(|c| {
                let radius = *linalg::sym_eigenvalues(&c.cov, d).last().unwrap();
                (linalg::dot(&c.mean, &c.mean).sqrt(), radius)
            })
            .fold((0.0f64, 0.0f64), |(a, b), (m, r)| (a.max(m), b.max(r)));
        (proxy.0 + proxy.1).max(1.0)
    }

    /// Constants for `p`, with the score Lipschitz constant taken as the largest
    /// spectral norm of the analytic score Jacobian over `points`.
    pub fn estimate(p: &GaussianMixture, points: &[Vec<f64>]) -> Result<Self> {
        let d = p.dim;
        let mut lip: f64 = 1.0;
        for x in points {
            let jac = p.score_jacobian(x)?;
            let eig = linalg::sym_eigenvalues(&jac, d);
            lip = lip.max(eig[0].abs()).max(eig[d - 1].abs());
        }
        Self::new(Self::subgaussian_proxy(p), lip, d)
    }
}

#[derive(Serialize, Deserialize)]
struct ComponentRepr {
    weight: f64,
    mean: Vec<f64>,
    cov: Vec<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
struct MixtureRepr {
    dim: usize,
    components: Vec<ComponentRepr>,
}

impl Serialize for GaussianMixture {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let d = self.dim;
        MixtureRepr {
            dim: d,
            components: self
                .components
                .iter()
                .map(|c| ComponentRepr {
                    weight: c.weight,
                    mean: c.mean.clone(),
                    cov: c.cov.chunks(d).map(<[f64]>::to_vec).collect(),
                })
                .collect(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for GaussianMixture {
    fn deserialize<D: serde::Deserializer<'de>>(de: D) -> std::result::Result<Self, D::Error> {
        let repr = MixtureRepr::deserialize(de)?;
        let d = repr.dim;
        let comps = repr
            .components
            .into_iter()
            .map(|c| {
                if c.cov.len() != d || c.cov.iter().any(|row| row.len() != d) {
                    return Err(Error::InvalidMixture(format!("covariance must be {d}x{d}")));
                }
                Ok((c.weight, c.mean, c.cov.concat()))
            })
            .collect::<Result<Vec<_>>>()
            .map_err(serde::de::Error::custom)?;
        GaussianMixture::new(d, comps).map_err(serde::de::Error::custom)
    }
}

impl PartialEq for GaussianMixture {
    fn eq(&self, other: &Self) -> bool {
        self.dim == other.dim
            && self.components.len() == other.components.len()
            && self
                .components
                .iter()
                .zip(&other.components)
                .all(|(a, b)| a.weight == b.weight && a.mean == b.mean && a.cov == b.cov)
    }
}
