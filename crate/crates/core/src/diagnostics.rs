//! Divergences between mixtures and sample batches, and regularity checks.
//!
//! Analytic pairs are compared by quadrature ([`kl_quadrature`],
//! [`fisher_quadrature`]). Sample batches are compared to an analytic target
//! through histograms, sorted-sample Wasserstein distances and mode weights.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::likelihood::QuadraticPotential;
use crate::mixture::{GaussianMixture, RegularityConstants, SmoothTime};
use crate::quadrature::QuadratureGrid;
use crate::sampler::SampleBatch;

/// Target mass allowed in empty histogram cells before the KL estimate is refused.
pub const MAX_UNSEEN_MASS: f64 = 0.5;
/// Half-width of the histogram box, in target component standard deviations.
pub const HISTOGRAM_SD_SPAN: f64 = 8.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DivergenceKind {
    #[serde(rename = "KL")]
    Kl,
    #[serde(rename = "FI")]
    Fi,
    #[serde(rename = "TV")]
    Tv,
    #[serde(rename = "W2-1D")]
    W2OneD,
    #[serde(rename = "mode-weights")]
    ModeWeights,
}

impl DivergenceKind {
    pub fn label(self) -> &'static str {
        match self {
            DivergenceKind::Kl => "KL",
            DivergenceKind::Fi => "FI",
            DivergenceKind::Tv => "TV",
            DivergenceKind::W2OneD => "W2-1D",
            DivergenceKind::ModeWeights => "mode-weights",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Estimator {
    Quadrature,
    Histogram,
    KdeScore,
    #[serde(rename = "sorted-1D")]
    Sorted1D,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DivergenceReport {
    pub kind: DivergenceKind,
    pub value: f64,
    pub estimator: Estimator,
    /// Grid or bin description.
    pub spec: String,
    pub mc_std_err: Option<f64>,
}

fn pair_grid(rho: &GaussianMixture, pi: &GaussianMixture) -> Result<QuadratureGrid> {
    check_dim(rho.dim(), pi.dim())?;
    QuadratureGrid::covering_pair(rho, pi)
}

/// `KL(ρ‖π) = ∫ ρ log(ρ/π)` by adaptive quadrature over `grid`
/// (defaults to a box covering both arguments).
pub fn kl_quadrature(rho: &GaussianMixture, pi: &GaussianMixture, grid: Option<&QuadratureGrid>) -> Result<f64> {
    check_dim(rho.dim(), pi.dim())?;
    let owned;
    let grid = match grid {
        Some(g) => g,
        None => {
            owned = pair_grid(rho, pi)?;
            &owned
        }
    };
    grid.check_coverage(rho)?;
    let v = grid.integrate(|x| {
        let lr = rho.log_density_unchecked(x);
        if lr == f64::NEG_INFINITY {
            return 0.0;
        }
        lr.exp() * (lr - pi.log_density_unchecked(x))
    });
    Ok(v.max(0.0))
}

/// `FI(ρ‖π) = ∫ ρ ‖∇log ρ - ∇log π‖²` by adaptive quadrature.
pub fn fisher_quadrature(rho: &GaussianMixture, pi: &GaussianMixture, grid: Option<&QuadratureGrid>) -> Result<f64> {
    check_dim(rho.dim(), pi.dim())?;
    let owned;
    let grid = match grid {
        Some(g) => g,
        None => {
            owned = pair_grid(rho, pi)?;
            &owned
        }
    };
    grid.check_coverage(rho)?;
    let d = rho.dim();
    let v = grid.integrate(|x| {
        let mut sr = vec![0.0; d];
        let mut sp = vec![0.0; d];
        let lr = rho.score_unchecked(x, &mut sr);
        pi.score_unchecked(x, &mut sp);
        let gap: f64 = sr.iter().zip(&sp).map(|(a, b)| (a - b).powi(2)).sum();
        lr.exp() * gap
    });
    Ok(v.max(0.0))
}

/// `∫ ρ ‖∇log a - ∇log b‖²`.
pub fn score_gap_quadrature(
    rho: &GaussianMixture,
    a: &GaussianMixture,
    b: &GaussianMixture,
    grid: &QuadratureGrid,
) -> Result<f64> {
    check_dim(rho.dim(), a.dim())?;
    check_dim(rho.dim(), b.dim())?;
    let d = rho.dim();
    Ok(grid.integrate(|x| {
        let mut sa = vec![0.0; d];
        let mut sb = vec![0.0; d];
        a.score_unchecked(x, &mut sa);
        b.score_unchecked(x, &mut sb);
        let gap: f64 = sa.iter().zip(&sb).map(|(u, v)| (u - v).powi(2)).sum();
        rho.log_density_unchecked(x).exp() * gap
    }))
}

/// Both sides of `FI(ρ‖μ₀) ≤ 2 FI(ρ‖μ_t) + 2 E_ρ‖∇log μ_t - ∇log μ₀‖²`.
pub fn fisher_triangle(
    rho: &GaussianMixture,
    mu_t: &GaussianMixture,
    mu_0: &GaussianMixture,
) -> Result<(f64, f64)> {
    let grid = QuadratureGrid::covering_pair(rho, mu_t)?;
    let grid = QuadratureGrid::covering_pair(rho, mu_0).map(|g| {
        let bounds = g
            .bounds
            .iter()
            .zip(&grid.bounds)
            .map(|(p, q)| (p.0.min(q.0), p.1.max(q.1)))
            .collect();
        QuadratureGrid { bounds, ..g }
    })?;
    let lhs = fisher_quadrature(rho, mu_0, Some(&grid))?;
    let rhs = 2.0 * fisher_quadrature(rho, mu_t, Some(&grid))? + 2.0 * score_gap_quadrature(rho, mu_t, mu_0, &grid)?;
    Ok((lhs, rhs))
}

/// Rectangular histogram over a box, plus one cell for everything outside.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramSpec {
    pub bounds: Vec<(f64, f64)>,
    pub bins_per_axis: usize,
}

impl HistogramSpec {
    /// Box covering the target at ±8 component standard deviations; in 2D the
    /// bin budget is split as `⌈√bins⌉` per axis.
    pub fn for_target(target: &GaussianMixture, bins: usize) -> Result<Self> {
        if bins == 0 {
            return Err(Error::Input("histogram needs at least one bin".into()));
        }
        let bins_per_axis = match target.dim() {
            1 => bins,
            2 => (bins as f64).sqrt().ceil() as usize,
            d => return Err(Error::Input(format!("histogram estimators need dim <= 2, got {d}"))),
        };
        Ok(HistogramSpec {
            bounds: target.bounding_box(HISTOGRAM_SD_SPAN),
            bins_per_axis,
        })
    }

    pub fn cells(&self) -> usize {
        self.bins_per_axis.pow(self.bounds.len() as u32)
    }

    fn cell_of(&self, x: &[f64]) -> Option<usize> {
        let mut idx = 0;
        for (axis, &(lo, hi)) in self.bounds.iter().enumerate() {
            let v = x[axis];
            if !(v >= lo && v < hi) {
                return None;
            }
            let b = (((v - lo) / (hi - lo)) * self.bins_per_axis as f64) as usize;
            idx = idx * self.bins_per_axis + b.min(self.bins_per_axis - 1);
        }
        Some(idx)
    }

    fn edges(&self, axis: usize, b: usize) -> (f64, f64) {
        let (lo, hi) = self.bounds[axis];
        let w = (hi - lo) / self.bins_per_axis as f64;
        (lo + w * b as f64, lo + w * (b + 1) as f64)
    }

    /// Target probability of each in-box cell followed by the outside cell.
    pub fn target_probabilities(&self, target: &GaussianMixture) -> Result<Vec<f64>> {
        let mut probs = Vec::with_capacity(self.cells() + 1);
        match self.bounds.len() {
            1 => {
                let mut prev = target.cdf_1d(self.bounds[0].0)?;
                let below = prev;
                for b in 0..self.bins_per_axis {
                    let next = target.cdf_1d(self.edges(0, b).1)?;
                    probs.push((next - prev).max(0.0));
                    prev = next;
                }
                probs.push((below + 1.0 - prev).max(0.0));
            }
            _ => {
                for bx in 0..self.bins_per_axis {
                    for by in 0..self.bins_per_axis {
                        let g = QuadratureGrid::new(vec![self.edges(0, bx), self.edges(1, by)], 1, 1e-6)?;
                        probs.push(g.integrate(|x| target.log_density_unchecked(x).exp()).max(0.0));
                    }
                }
                let inside: f64 = probs.iter().sum();
                probs.push((1.0 - inside).max(0.0));
            }
        }
        Ok(probs)
    }

    /// Empirical count per cell, outside cell last.
    pub fn counts(&self, batch: &SampleBatch) -> Vec<u64> {
        let mut counts = vec![0u64; self.cells() + 1];
        let outside = self.cells();
        for row in batch.rows() {
            counts[self.cell_of(row).unwrap_or(outside)] += 1;
        }
        counts
    }

    fn describe(&self, eps: f64) -> String {
        let bounds: Vec<String> = self.bounds.iter().map(|(lo, hi)| format!("[{lo},{hi}]")).collect();
        format!(
            "bins_per_axis={} box={} outside_cell=1 eps={eps:e}",
            self.bins_per_axis,
            bounds.join("x")
        )
    }
}

/// Smoothing level `1/(10·N·bins)` added to every empirical cell probability.
pub fn histogram_epsilon(n: usize, bins: usize) -> f64 {
    1.0 / (10.0 * n as f64 * bins as f64)
}

/// Histogram TV, histogram `KL(target‖empirical)` with add-ε smoothing and,
/// in 1D, the sorted-sample `W2` distance to the target quantiles.
pub fn empirical_divergences(batch: &SampleBatch, target: &GaussianMixture, bins: usize) -> Result<Vec<DivergenceReport>> {
    if batch.is_empty() {
        return Err(Error::Input("empty sample batch".into()));
    }
    check_dim(target.dim(), batch.dim)?;
    let spec = HistogramSpec::for_target(target, bins)?;
    let n = batch.len();
    let cells = spec.cells() + 1;
    let probs = spec.target_probabilities(target)?;
    let counts = spec.counts(batch);
    let eps = histogram_epsilon(n, spec.cells());
    let desc = spec.describe(eps);
    let nf = n as f64;

    let q: Vec<f64> = counts.iter().map(|&c| c as f64 / nf).collect();
    let tv = 0.5 * probs.iter().zip(&q).map(|(p, q)| (p - q).abs()).sum::<f64>();
    // delta-method standard error of the plug-in TV
    let signs: Vec<f64> = probs.iter().zip(&q).map(|(p, q)| 0.5 * (q - p).signum()).collect();
    let m1: f64 = q.iter().zip(&signs).map(|(q, s)| q * s).sum();
    let m2: f64 = q.iter().zip(&signs).map(|(q, s)| q * s * s).sum();
    let tv_se = ((m2 - m1 * m1).max(0.0) / nf).sqrt();

    let unseen: f64 = probs.iter().zip(&counts).filter(|(_, &c)| c == 0).map(|(p, _)| p).sum();
    let mut reports = vec![DivergenceReport {
        kind: DivergenceKind::Tv,
        value: tv,
        estimator: Estimator::Histogram,
        spec: desc.clone(),
        mc_std_err: Some(tv_se),
    }];
    if unseen > MAX_UNSEEN_MASS {
        return Err(Error::Coverage { missing_mass: unseen });
    }
    let norm = 1.0 + eps * cells as f64;
    let smoothed: Vec<f64> = q.iter().map(|v| (v + eps) / norm).collect();
    let kl: f64 = probs
        .iter()
        .zip(&smoothed)
        .filter(|(p, _)| **p > 0.0)
        .map(|(p, s)| p * (p / s).ln())
        .sum();
    // delta method: Var ≈ (Σ p²/q - 1)/N under multinomial sampling
    let chi: f64 = probs.iter().zip(&smoothed).map(|(p, s)| p * p / s).sum();
    reports.push(DivergenceReport {
        kind: DivergenceKind::Kl,
        value: kl.max(0.0),
        estimator: Estimator::Histogram,
        spec: desc,
        mc_std_err: Some(((chi - 1.0).max(0.0) / nf).sqrt()),
    });
    if target.dim() == 1 {
        reports.push(DivergenceReport {
            kind: DivergenceKind::W2OneD,
            value: sorted_w2(&batch.coordinate(0), target)?,
            estimator: Estimator::Sorted1D,
            spec: format!("n={n} quantile_levels=(i-0.5)/n"),
            mc_std_err: None,
        });
    }
    Ok(reports)
}

/// `W2` between the empirical law of `xs` and a univariate mixture.
pub fn sorted_w2(xs: &[f64], target: &GaussianMixture) -> Result<f64> {
    if xs.is_empty() {
        return Err(Error::Input("empty sample".into()));
    }
    let mut sorted = xs.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let mut acc = 0.0;
    for (i, x) in sorted.iter().enumerate() {
        let q = target.quantile_1d((i as f64 + 0.5) / n)?;
        acc += (x - q).powi(2);
    }
    Ok((acc / n).sqrt())
}

/// One cell of a partition of `ℝ^d`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Region {
    /// `normal·x < offset`
    Below { normal: Vec<f64>, offset: f64 },
    /// `normal·x ≥ offset`
    AtLeast { normal: Vec<f64>, offset: f64 },
    /// `lo ≤ x < hi` coordinatewise
    Box { lo: Vec<f64>, hi: Vec<f64> },
}

impl Region {
    /// The two sides of the hyperplane `normal·x = offset`.
    pub fn split(normal: Vec<f64>, offset: f64) -> [Region; 2] {
        [
            Region::Below {
                normal: normal.clone(),
                offset,
            },
            Region::AtLeast { normal, offset },
        ]
    }

    fn dim(&self) -> usize {
        match self {
            Region::Below { normal, .. } | Region::AtLeast { normal, .. } => normal.len(),
            Region::Box { lo, .. } => lo.len(),
        }
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        let dot = |n: &[f64]| n.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
        match self {
            Region::Below { normal, offset } => dot(normal) < *offset,
            Region::AtLeast { normal, offset } => dot(normal) >= *offset,
            Region::Box { lo, hi } => x.iter().zip(lo.iter().zip(hi)).all(|(v, (l, h))| v >= l && v < h),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeWeights {
    pub weights: Vec<f64>,
    /// Binomial standard errors `√(w(1-w)/N)`.
    pub std_errs: Vec<f64>,
}

impl ModeWeights {
    pub fn heaviest(&self) -> usize {
        self.weights
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map_or(0, |(i, _)| i)
    }
}

/// Fraction of the batch in each cell of `partition`.
///
/// Every sample must fall in exactly one cell.
pub fn mode_weights(batch: &SampleBatch, partition: &[Region]) -> Result<ModeWeights> {
    if batch.is_empty() {
        return Err(Error::Input("empty sample batch".into()));
    }
    if partition.is_empty() {
        return Err(Error::Input("empty partition".into()));
    }
    for r in partition {
        check_dim(batch.dim, r.dim())?;
    }
    let mut counts = vec![0u64; partition.len()];
    for (i, row) in batch.rows().enumerate() {
        let mut hit = None;
        for (k, r) in partition.iter().enumerate() {
            if r.contains(row) {
                if hit.is_some() {
                    return Err(Error::Input(format!("partition cells overlap at sample {i}")));
                }
                hit = Some(k);
            }
        }
        match hit {
            Some(k) => counts[k] += 1,
            None => return Err(Error::Input(format!("partition does not cover sample {i}"))),
        }
    }
    let n = batch.len() as f64;
    let weights: Vec<f64> = counts.iter().map(|&c| c as f64 / n).collect();
    let std_errs = weights.iter().map(|w| (w * (1.0 - w) / n).sqrt()).collect();
    Ok(ModeWeights { weights, std_errs })
}

/// Analytic probability of each cell under a univariate mixture, for
/// partitions made of 1D half-lines and intervals.
pub fn analytic_mode_weights_1d(target: &GaussianMixture, partition: &[Region]) -> Result<Vec<f64>> {
    check_dim(1, target.dim())?;
    partition
        .iter()
        .map(|r| {
            let (lo, hi) = match r {
                Region::Below { normal, offset } | Region::AtLeast { normal, offset } => {
                    check_dim(1, normal.len())?;
                    let n = normal[0];
                    if n == 0.0 {
                        return Err(Error::Input("degenerate half-line".into()));
                    }
                    let cut = offset / n;
                    let below = matches!(r, Region::Below { .. });
                    if below == (n > 0.0) {
                        (f64::NEG_INFINITY, cut)
                    } else {
                        (cut, f64::INFINITY)
                    }
                }
                Region::Box { lo, hi } => {
                    check_dim(1, lo.len())?;
                    (lo[0], hi[0])
                }
            };
            let cdf = |v: f64| -> Result<f64> {
                if v == f64::NEG_INFINITY {
                    Ok(0.0)
                } else if v == f64::INFINITY {
                    Ok(1.0)
                } else {
                    target.cdf_1d(v)
                }
            };
            Ok((cdf(hi)? - cdf(lo)?).max(0.0))
        })
        .collect()
}

/// The flipped-weight pair around a symmetric two-mode prior.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlippedPair {
    pub separation: f64,
    pub posterior: GaussianMixture,
    pub flipped: GaussianMixture,
    pub fisher: f64,
    pub kl: f64,
}

/// Prior `½N(-ℓ,1) + ½N(ℓ,1)` and potential `R(x) = (x+ℓ)²/ℓ²`.
pub fn flipped_instance(separation: f64) -> Result<(GaussianMixture, QuadraticPotential)> {
    let l = separation;
    let prior = GaussianMixture::univariate(&[(0.5, -l, 1.0), (0.5, l, 1.0)])?;
    let potential = QuadraticPotential::new(vec![vec![1.0]], vec![-l], l * l / 2.0)?;
    Ok((prior, potential))
}

/// The posterior `p_R` of [`flipped_instance`] against a copy with its two
/// weights exchanged.
///
/// The two share every component, so their score difference lives only in
/// the narrow region between the modes: the Fisher divergence is tiny while
/// the KL divergence is of order one.
pub fn flipped_posterior_example(separation: f64) -> Result<FlippedPair> {
    if !(separation.is_finite() && separation >= 2.0) {
        return Err(Error::Domain(format!("separation must be >= 2, got {separation}")));
    }
    let (prior, potential) = flipped_instance(separation)?;
    let posterior = prior.tilt(&potential)?;
    let comps = posterior.components();
    let flipped = GaussianMixture::normalized(
        1,
        vec![
            (comps[1].weight(), comps[0].mean().to_vec(), comps[0].cov().to_vec()),
            (comps[0].weight(), comps[1].mean().to_vec(), comps[1].cov().to_vec()),
        ],
    )?;
    let fisher = fisher_quadrature(&flipped, &posterior, None)?;
    let kl = kl_quadrature(&flipped, &posterior, None)?;
    Ok(FlippedPair {
        separation,
        posterior,
        flipped,
        fisher,
        kl,
    })
}

/// Closed-form posterior weight ratio (light over heavy) of [`flipped_instance`].
pub fn flipped_weight_ratio(separation: f64) -> f64 {
    let l2 = separation * separation;
    (-4.0 + 8.0 / (l2 + 2.0)).exp()
}

/// Moment bounds for a tilted posterior `ν ∝ p e^{-R}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubgaussianReport {
    pub posterior_mean: Vec<f64>,
    pub second_moment: f64,
    /// Subgaussian proxy `𝔪` of the prior.
    pub m_proxy: f64,
    /// Curvature constant `max(1, λ_max(∇²R))`.
    pub curvature: f64,
    pub minimizer_norm: f64,
    pub mean_norm_sq: f64,
    pub mean_bound: f64,
    pub second_moment_bound: f64,
    pub holds: bool,
}

/// Moments of `tilt(p, R)` by quadrature, against
/// `‖EY‖² ≤ 3𝔯𝔪²` and `E‖Y‖² ≤ 9𝔯𝔪²(𝔪 + ‖𝔵‖/2)² d + 3𝔯𝔪²`.
///
/// `𝔪` is [`RegularityConstants::subgaussian_proxy`] (largest component mean
/// norm plus largest covariance eigenvalue, at least one).
pub fn subgaussian_posterior_check(prior: &GaussianMixture, potential: &QuadraticPotential) -> Result<SubgaussianReport> {
    check_dim(prior.dim(), potential.dim())?;
    let d = prior.dim();
    let posterior = prior.tilt(potential)?;
    let grid = QuadratureGrid::covering(&posterior)?;
    grid.check_coverage(&posterior)?;
    let density = |x: &[f64]| posterior.log_density_unchecked(x).exp();
    let posterior_mean: Vec<f64> = (0..d).map(|i| grid.integrate(|x| x[i] * density(x))).collect();
    let second_moment = grid.integrate(|x| x.iter().map(|v| v * v).sum::<f64>() * density(x));
    let m = RegularityConstants::subgaussian_proxy(prior);
    let r = potential.curvature_bounds().1.max(1.0);
    let xn = potential.minimizer_norm();
    let mean_norm_sq: f64 = posterior_mean.iter().map(|v| v * v).sum();
    let mean_bound = 3.0 * r * m * m;
    let second_moment_bound = 9.0 * r * m * m * (m + xn / 2.0).powi(2) * d as f64 + 3.0 * r * m * m;
    Ok(SubgaussianReport {
        holds: mean_norm_sq <= mean_bound && second_moment <= second_moment_bound,
        posterior_mean,
        second_moment,
        m_proxy: m,
        curvature: r,
        minimizer_norm: xn,
        mean_norm_sq,
        mean_bound,
        second_moment_bound,
    })
}

/// `(2π(1 - e^{-2t}))^{-d/2}`, an upper bound on any OU-smoothed density.
pub fn smoothed_density_bound(t: SmoothTime, dim: usize) -> Result<f64> {
    if t.value() <= 0.0 {
        return Err(Error::Domain("density bound requires t > 0".into()));
    }
    let s2 = -(-2.0 * t.value()).exp_m1();
    Ok((2.0 * std::f64::consts::PI * s2).powf(-(dim as f64) / 2.0))
}

/// Kernel estimate of `FI(ρ‖π)` from samples of `ρ`, `ρ` replaced by a
/// leave-one-out Gaussian KDE with Silverman bandwidth.
///
/// High variance and `O(N²)` cost; offered for exploration only.
pub fn kde_fisher_estimate(batch: &SampleBatch, target: &GaussianMixture, bandwidth: Option<f64>) -> Result<DivergenceReport> {
    check_dim(target.dim(), batch.dim)?;
    let n = batch.len();
    if n < 2 {
        return Err(Error::Input("kernel score estimate needs at least two samples".into()));
    }
    let d = batch.dim;
    let h = match bandwidth {
        Some(h) if h > 0.0 => h,
        Some(h) => return Err(Error::Input(format!("bandwidth must be positive, got {h}"))),
        None => {
            let sd = batch.variance().iter().sum::<f64>().sqrt() / (d as f64).sqrt();
            sd * (4.0 / ((d as f64 + 2.0) * n as f64)).powf(1.0 / (d as f64 + 4.0))
        }
    };
    let rows: Vec<&[f64]> = batch.rows().collect();
    let inv_h2 = 1.0 / (h * h);
    let mut terms = Vec::with_capacity(n);
    let mut ts = vec![0.0; d];
    for (i, x) in rows.iter().enumerate() {
        let logs: Vec<f64> = rows
            .iter()
            .map(|y| -0.5 * inv_h2 * x.iter().zip(*y).map(|(a, b)| (a - b).powi(2)).sum::<f64>())
            .collect();
        let max = logs
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != i)
            .map(|(_, l)| *l)
            .fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        let mut grad = vec![0.0; d];
        for (j, y) in rows.iter().enumerate() {
            if j == i {
                continue;
            }
            let w = (logs[j] - max).exp();
            total += w;
            for k in 0..d {
                grad[k] += w * (y[k] - x[k]) * inv_h2;
            }
        }
        target.score_unchecked(x, &mut ts);
        terms.push(grad.iter().zip(&ts).map(|(g, t)| (g / total - t).powi(2)).sum::<f64>());
    }
    let mean = terms.iter().sum::<f64>() / n as f64;
    let var = terms.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
    Ok(DivergenceReport {
        kind: DivergenceKind::Fi,
        value: mean,
        estimator: Estimator::KdeScore,
        spec: format!("leave-one-out gaussian kde bandwidth={h}"),
        mc_std_err: Some((var / n as f64).sqrt()),
    })
}
