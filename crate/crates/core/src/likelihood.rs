//! Convex quadratic measurement potentials `R(x) = ‖Ax - y‖²/(2σ²) - R_min`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::linalg;

/// Quadratic measurement potential, shifted so that `min R = 0`.
///
/// Rank-deficient `A` is allowed; the lower curvature bound is then zero.
#[derive(Debug, Clone)]
pub struct QuadraticPotential {
    rows: usize,
    dim: usize,
    a: Vec<f64>,
    y: Vec<f64>,
    noise_var: f64,
    hessian: Vec<f64>,
    linear: Vec<f64>,
    constant: f64,
    r_min: f64,
    minimizer: Vec<f64>,
}

impl QuadraticPotential {
    /// `A` given as rows.
    pub fn new(a: Vec<Vec<f64>>, y: Vec<f64>, noise_var: f64) -> Result<Self> {
        let rows = a.len();
        let dim = a.first().map_or(0, Vec::len);
        if a.iter().any(|r| r.len() != dim) {
            return Err(Error::InvalidPotential("ragged measurement matrix".into()));
        }
        Self::from_flat(rows, dim, a.concat(), y, noise_var)
    }

    /// `A` given row-major as an `rows x dim` buffer.
    pub fn from_flat(rows: usize, dim: usize, a: Vec<f64>, y: Vec<f64>, noise_var: f64) -> Result<Self> {
        if rows == 0 || dim == 0 {
            return Err(Error::InvalidPotential("measurement matrix must be non-empty".into()));
        }
        if a.len() != rows * dim {
            return Err(Error::InvalidPotential("matrix size does not match its shape".into()));
        }
        if y.len() != rows {
            return Err(Error::InvalidPotential(format!(
                "measurement has length {}, A has {rows} rows",
                y.len()
            )));
        }
        if !(noise_var.is_finite() && noise_var > 0.0) {
            return Err(Error::InvalidPotential(format!("noise_var must be positive, got {noise_var}")));
        }
        if a.iter().chain(&y).any(|v| !v.is_finite()) {
            return Err(Error::InvalidPotential("non-finite entry".into()));
        }
        let am = DMatrix::from_row_slice(rows, dim, &a);
        let yv = DVector::from_column_slice(&y);
        let h = am.transpose() * &am / noise_var;
        let h = (&h + h.transpose()) * 0.5;
        let b = am.transpose() * &yv / noise_var;

        let svd = am.clone().svd(true, true);
        let eps = 1e-12 * svd.singular_values.max().max(1.0);
        let minimizer = svd
            .solve(&yv, eps)
            .map_err(|e| Error::InvalidPotential(format!("least-squares solve failed: {e}")))?;
        let resid = &am * &minimizer - &yv;
        let r_min = resid.norm_squared() / (2.0 * noise_var);
        let constant = yv.norm_squared() / (2.0 * noise_var) - r_min;

        Ok(QuadraticPotential {
            rows,
            dim,
            a,
            y,
            noise_var,
            hessian: linalg::from_dmatrix(&h),
            linear: b.iter().copied().collect(),
            constant,
            r_min,
            minimizer: minimizer.iter().copied().collect(),
        })
    }

    /// `R ≡ 0` on `ℝ^d` (A = 0).
    pub fn zero(dim: usize) -> Self {
        Self::from_flat(1, dim, vec![0.0; dim], vec![0.0], 1.0).expect("valid zero potential")
    }

    /// `R(x) = ‖x - center‖²/(2σ²)` (A = I).
    pub fn isotropic(center: Vec<f64>, noise_var: f64) -> Result<Self> {
        let d = center.len();
        Self::from_flat(d, d, crate::mixture::identity(d), center, noise_var)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn noise_var(&self) -> f64 {
        self.noise_var
    }

    pub fn measurement(&self) -> &[f64] {
        &self.y
    }

    /// Row-major `A`.
    pub fn matrix(&self) -> &[f64] {
        &self.a
    }

    /// `AᵀA/σ²`, row-major.
    pub fn hessian(&self) -> &[f64] {
        &self.hessian
    }

    /// `Aᵀy/σ²`.
    pub fn linear_term(&self) -> &[f64] {
        &self.linear
    }

    /// `c` in `R(x) = ½xᵀHx - bᵀx + c`.
    pub fn constant_term(&self) -> f64 {
        self.constant
    }

    /// Unshifted minimum `min ‖Ax - y‖²/(2σ²)`.
    pub fn residual_minimum(&self) -> f64 {
        self.r_min
    }

    /// Minimum-norm minimizer `𝔵`, with `R(𝔵) = 0`.
    pub fn minimizer(&self) -> &[f64] {
        &self.minimizer
    }

    /// `𝔇 = ‖𝔵‖`.
    pub fn minimizer_norm(&self) -> f64 {
        linalg::dot(&self.minimizer, &self.minimizer).sqrt()
    }

    pub fn potential(&self, x: &[f64]) -> Result<f64> {
        check_dim(self.dim, x.len())?;
        let d = self.dim;
        let resid: f64 = (0..self.rows)
            .map(|i| {
                let r = linalg::dot(&self.a[i * d..(i + 1) * d], x) - self.y[i];
                r * r
            })
            .sum();
        Ok((resid / (2.0 * self.noise_var) - self.r_min).max(0.0))
    }

    pub fn grad_potential(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dim, x.len())?;
        let mut out = vec![0.0; self.dim];
        self.grad_into(x, &mut out);
        Ok(out)
    }

    /// `out = Hx - b`.
    #[inline]
    pub(crate) fn grad_into(&self, x: &[f64], out: &mut [f64]) {
        linalg::mat_vec(&self.hessian, x, out);
        for (o, b) in out.iter_mut().zip(&self.linear) {
            *o -= b;
        }
    }

    /// `drift -= ∇R(x)` without a temporary.
    #[inline]
    pub(crate) fn subtract_grad(&self, x: &[f64], drift: &mut [f64]) {
        let d = self.dim;
        for i in 0..d {
            let row = &self.hessian[i * d..(i + 1) * d];
            drift[i] -= linalg::dot(row, x) - self.linear[i];
        }
    }

    /// `(λ_min(AᵀA)/σ², λ_max(AᵀA)/σ²)`.
    pub fn curvature_bounds(&self) -> (f64, f64) {
        let eig = linalg::sym_eigenvalues(&self.hessian, self.dim);
        let scale = eig[self.dim - 1].abs().max(1.0);
        let clean = |v: f64| if v.abs() <= 1e-14 * scale { 0.0 } else { v };
        (clean(eig[0]).max(0.0), clean(eig[self.dim - 1]))
    }
}

#[derive(Serialize, Deserialize)]
struct PotentialRepr {
    #[serde(rename = "A")]
    a: Vec<Vec<f64>>,
    y: Vec<f64>,
    noise_var: f64,
}

impl Serialize for QuadraticPotential {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        PotentialRepr {
            a: self.a.chunks(self.dim).map(<[f64]>::to_vec).collect(),
            y: self.y.clone(),
            noise_var: self.noise_var,
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for QuadraticPotential {
    fn deserialize<D: serde::Deserializer<'de>>(de: D) -> std::result::Result<Self, D::Error> {
        let r = PotentialRepr::deserialize(de)?;
        QuadraticPotential::new(r.a, r.y, r.noise_var).map_err(serde::de::Error::custom)
    }
}

impl PartialEq for QuadraticPotential {
    fn eq(&self, other: &Self) -> bool {
        self.rows == other.rows
            && self.dim == other.dim
            && self.a == other.a
            && self.y == other.y
            && self.noise_var == other.noise_var
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn power_iteration(h: &[f64], d: usize) -> f64 {
        let mut v = vec![1.0; d];
        let mut lambda = 0.0;
        for _ in 0..500 {
            let mut w = vec![0.0; d];
            linalg::mat_vec(h, &v, &mut w);
            let norm = linalg::dot(&w, &w).sqrt();
            lambda = norm / linalg::dot(&v, &v).sqrt();
            v = w.iter().map(|x| x / norm).collect();
        }
        lambda
    }

    #[test]
    fn potential_examples() {
        let r = QuadraticPotential::isotropic(vec![0.0, 0.0], 1.0).unwrap();
        assert_eq!(r.potential(&[0.0, 0.0]).unwrap(), 0.0);
        let r = QuadraticPotential::isotropic(vec![1.0, 1.0], 1.0).unwrap();
        assert!((r.potential(&[0.0, 0.0]).unwrap() - 1.0).abs() < 1e-15);

        let r = QuadraticPotential::new(vec![vec![1.0, 0.0]], vec![2.0], 0.5).unwrap();
        let direct = (2.0f64 - 1.0).powi(2) / (2.0 * 0.5);
        assert!((r.potential(&[1.0, 7.0]).unwrap() - direct).abs() < 1e-15);
        assert!((r.potential(&[1.0, -3.0]).unwrap() - direct).abs() < 1e-15);
    }

    #[test]
    fn potential_is_min_shifted_when_y_outside_range() {
        // y = (1, 1) but A only reaches the first axis; R_min = 1/2.
        let r = QuadraticPotential::new(vec![vec![1.0], vec![0.0]], vec![1.0, 1.0], 1.0).unwrap();
        assert!((r.residual_minimum() - 0.5).abs() < 1e-12);
        assert!(r.potential(r.minimizer()).unwrap().abs() < 1e-12);
        assert!((r.minimizer()[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn grad_examples() {
        let r = QuadraticPotential::isotropic(vec![0.0, 0.0], 1.0).unwrap();
        assert_eq!(r.grad_potential(&[0.3, -2.0]).unwrap(), vec![0.3, -2.0]);

        let r = QuadraticPotential::new(
            vec![vec![1.0, 2.0, 0.0], vec![0.5, -1.0, 3.0]],
            vec![0.7, -0.2],
            0.3,
        )
        .unwrap();
        let g = r.grad_potential(r.minimizer()).unwrap();
        assert!(g.iter().all(|v| v.abs() < 1e-10), "{g:?}");
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let r = QuadraticPotential::zero(2);
        assert!(matches!(r.potential(&[1.0]), Err(Error::DimensionMismatch { .. })));
        assert!(matches!(r.grad_potential(&[1.0, 2.0, 3.0]), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn curvature_examples() {
        let r = QuadraticPotential::isotropic(vec![0.0, 0.0], 1.0).unwrap();
        assert_eq!(r.curvature_bounds(), (1.0, 1.0));

        let r = QuadraticPotential::new(vec![vec![1.0, 0.0], vec![0.0, 2.0]], vec![0.0, 0.0], 2.0).unwrap();
        let (lo, hi) = r.curvature_bounds();
        assert!((lo - 0.5).abs() < 1e-12 && (hi - 2.0).abs() < 1e-12);
        assert!((power_iteration(r.hessian(), 2) - hi).abs() < 1e-9);

        let r = QuadraticPotential::new(vec![vec![1.0, 0.0]], vec![0.0], 0.25).unwrap();
        assert_eq!(r.curvature_bounds(), (0.0, 4.0));
    }

    #[test]
    fn upper_curvature_respects_operator_norm_bound() {
        let a = vec![vec![1.0, 2.0], vec![-0.5, 0.3], vec![0.0, 1.5]];
        let sigma2 = 0.7;
        let r = QuadraticPotential::new(a.clone(), vec![0.0; 3], sigma2).unwrap();
        let am = DMatrix::from_row_slice(3, 2, &a.concat());
        let op_norm = am.svd(false, false).singular_values.max();
        assert!(r.curvature_bounds().1 <= op_norm * op_norm / sigma2 * (1.0 + 1e-12));
    }

    #[test]
    fn json_round_trip() {
        let r = QuadraticPotential::new(vec![vec![1.0, 0.25]], vec![0.1], 0.3).unwrap();
        let s = serde_json::to_string(&r).unwrap();
        assert!(s.contains("\"A\""));
        let back: QuadraticPotential = serde_json::from_str(&s).unwrap();
        assert_eq!(back, r);
        assert!(serde_json::from_str::<QuadraticPotential>(r#"{"A":[[1.0]],"y":[0.0],"noise_var":-1.0}"#).is_err());
    }

    fn random_potential() -> impl Strategy<Value = (QuadraticPotential, Vec<f64>, Vec<f64>)> {
        (1usize..4, 1usize..4).prop_flat_map(|(m, d)| {
            (
                prop::collection::vec(-2.0f64..2.0, m * d),
                prop::collection::vec(-2.0f64..2.0, m),
                0.1f64..3.0,
                prop::collection::vec(-3.0f64..3.0, d),
                prop::collection::vec(-3.0f64..3.0, d),
            )
                .prop_map(move |(a, y, s, x, z)| {
                    (QuadraticPotential::from_flat(m, d, a, y, s).unwrap(), x, z)
                })
        })
    }

    proptest! {
        #[test]
        fn convex_nonnegative_affine_gradient((r, x, z) in random_potential(), lambda in 0.0f64..1.0) {
            let mid: Vec<f64> = x.iter().zip(&z).map(|(a, b)| lambda * a + (1.0 - lambda) * b).collect();
            let lhs = r.potential(&mid).unwrap();
            let rhs = lambda * r.potential(&x).unwrap() + (1.0 - lambda) * r.potential(&z).unwrap();
            prop_assert!(lhs <= rhs + 1e-10);
            prop_assert!(r.potential(&x).unwrap() >= -1e-12);

            let gx = r.grad_potential(&x).unwrap();
            let gz = r.grad_potential(&z).unwrap();
            let diff: Vec<f64> = x.iter().zip(&z).map(|(a, b)| a - b).collect();
            let mut hd = vec![0.0; r.dim()];
            linalg::mat_vec(r.hessian(), &diff, &mut hd);
            for i in 0..r.dim() {
                prop_assert!((gx[i] - gz[i] - hd[i]).abs() < 1e-10);
            }
        }

        #[test]
        fn grad_matches_finite_differences((r, x, _z) in random_potential()) {
            let g = r.grad_potential(&x).unwrap();
            let h = 1e-5;
            // unshifted residual avoids the max(0) clamp near the minimum
            let raw = |p: &[f64]| r.potential(p).unwrap() + r.residual_minimum();
            for i in 0..r.dim() {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[i] += h;
                xm[i] -= h;
                let fd = (raw(&xp) - raw(&xm)) / (2.0 * h);
                prop_assert!((fd - g[i]).abs() <= 1e-6 * g[i].abs().max(1.0), "fd {} vs {}", fd, g[i]);
            }
        }
    }
}
