//! Small dense row-major matrix helpers used on the evaluation hot paths.
//!
//! Dimensions here are tiny (the sampler targets d in the single digits), so
//! these routines work on flat `&[f64]` buffers and never allocate. Anything
//! spectral goes through `nalgebra`.

use nalgebra::{DMatrix, SymmetricEigen};

/// In-place lower Cholesky factor of a row-major `d x d` SPD matrix.
///
/// On success `a` holds `L` in its lower triangle (upper triangle zeroed).
/// Returns `false` if a non-positive pivot is met.
pub(crate) fn cholesky_in_place(a: &mut [f64], d: usize) -> bool {
    for j in 0..d {
        let mut diag = a[j * d + j];
        for k in 0..j {
            diag -= a[j * d + k] * a[j * d + k];
        }
        if !(diag > 0.0) {
            return false;
        }
        let ljj = diag.sqrt();
        a[j * d + j] = ljj;
        for i in (j + 1)..d {
            let mut s = a[i * d + j];
            for k in 0..j {
                s -= a[i * d + k] * a[j * d + k];
            }
            a[i * d + j] = s / ljj;
        }
        for k in (j + 1)..d {
            a[j * d + k] = 0.0;
        }
    }
    true
}

/// `log det(A)` from its Cholesky factor.
pub(crate) fn chol_log_det(l: &[f64], d: usize) -> f64 {
    (0..d).map(|i| 2.0 * l[i * d + i].ln()).sum()
}

/// Writes `A^{-1}` into `out` given the Cholesky factor `l` of `A`.
pub(crate) fn chol_inverse(l: &[f64], d: usize, out: &mut [f64]) {
    // Column by column: solve L L^T x = e_j.
    let mut col = [0.0f64; 16];
    let mut heap;
    let col: &mut [f64] = if d <= 16 {
        &mut col[..d]
    } else {
        heap = vec![0.0; d];
        &mut heap[..]
    };
    for j in 0..d {
        col.iter_mut().for_each(|c| *c = 0.0);
        col[j] = 1.0;
        forward_sub(l, d, col);
        backward_sub_t(l, d, col);
        for i in 0..d {
            out[i * d + j] = col[i];
        }
    }
}

/// Solves `L z = b` in place.
pub(crate) fn forward_sub(l: &[f64], d: usize, b: &mut [f64]) {
    for i in 0..d {
        let mut s = b[i];
        for k in 0..i {
            s -= l[i * d + k] * b[k];
        }
        b[i] = s / l[i * d + i];
    }
}

/// Solves `L^T z = b` in place.
pub(crate) fn backward_sub_t(l: &[f64], d: usize, b: &mut [f64]) {
    for i in (0..d).rev() {
        let mut s = b[i];
        for k in (i + 1)..d {
            s -= l[k * d + i] * b[k];
        }
        b[i] = s / l[i * d + i];
    }
}

/// `out = M v` for row-major `M`.
#[inline]
pub(crate) fn mat_vec(m: &[f64], v: &[f64], out: &mut [f64]) {
    let d = v.len();
    for (i, o) in out.iter_mut().enumerate() {
        let row = &m[i * d..(i + 1) * d];
        *o = row.iter().zip(v).map(|(a, b)| a * b).sum();
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn to_dmatrix(m: &[f64], rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_row_slice(rows, cols, m)
}

pub(crate) fn from_dmatrix(m: &DMatrix<f64>) -> Vec<f64> {
    let mut out = Vec::with_capacity(m.nrows() * m.ncols());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            out.push(m[(i, j)]);
        }
    }
    out
}

/// Sorted eigenvalues of a symmetric row-major matrix.
pub(crate) fn sym_eigenvalues(m: &[f64], d: usize) -> Vec<f64> {
    let eig = SymmetricEigen::new(to_dmatrix(m, d, d));
    let mut vals: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    vals.sort_by(f64::total_cmp);
    vals
}

pub(crate) fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cholesky_inverse_roundtrip() {
        let a = [4.0, 2.0, 0.6, 2.0, 5.0, 1.0, 0.6, 1.0, 3.0];
        let mut l = a;
        assert!(cholesky_in_place(&mut l, 3));
        let mut inv = [0.0; 9];
        chol_inverse(&l, 3, &mut inv);
        for i in 0..3 {
            for j in 0..3 {
                let v: f64 = (0..3).map(|k| a[i * 3 + k] * inv[k * 3 + j]).sum();
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((v - expect).abs() < 1e-12);
            }
        }
        let det = DMatrix::from_row_slice(3, 3, &a).determinant();
        assert!((chol_log_det(&l, 3) - det.ln()).abs() < 1e-12);
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let mut a = [1.0, 2.0, 2.0, 1.0];
        assert!(!cholesky_in_place(&mut a, 2));
    }
}
