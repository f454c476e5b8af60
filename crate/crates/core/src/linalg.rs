//! Small dense linear-algebra helpers.
//!
//! Mixture components live in D ≤ 8, where allocation-light routines on flat
//! row-major storage beat general matrix types on the sampler hot path. Anything
//! needing an SVD goes through nalgebra.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn norm_sq(a: &[f64]) -> f64 {
    dot(a, a)
}

/// `y = M x` for row-major `M` with `cols == x.len()`.
pub fn matvec(m: &[f64], rows: usize, x: &[f64]) -> Vec<f64> {
    let cols = x.len();
    (0..rows)
        .map(|r| dot(&m[r * cols..(r + 1) * cols], x))
        .collect()
}

/// `y = Mᵀ u` for row-major `M` (rows × cols).
pub fn matvec_t(m: &[f64], cols: usize, u: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; cols];
    for (r, &ur) in u.iter().enumerate() {
        let row = &m[r * cols..(r + 1) * cols];
        for (o, &v) in out.iter_mut().zip(row) {
            *o += v * ur;
        }
    }
    out
}

/// Lower Cholesky factor of a symmetric positive-definite row-major matrix.
pub fn cholesky(a: &[f64], n: usize) -> Option<Vec<f64>> {
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut sum = a[i * n + j];
            for k in 0..j {
                sum -= l[i * n + k] * l[j * n + k];
            }
            if i == j {
                if sum <= 0.0 || !sum.is_finite() {
                    return None;
                }
                l[i * n + i] = sum.sqrt();
            } else {
                l[i * n + j] = sum / l[j * n + j];
            }
        }
    }
    Some(l)
}

/// Solves `L z = b` in place for lower-triangular `L`.
pub fn forward_sub(l: &[f64], n: usize, b: &mut [f64]) {
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= l[i * n + k] * b[k];
        }
        b[i] = s / l[i * n + i];
    }
}

/// Solves `Lᵀ z = b` in place for lower-triangular `L`.
pub fn backward_sub_t(l: &[f64], n: usize, b: &mut [f64]) {
    for i in (0..n).rev() {
        let mut s = b[i];
        for k in i + 1..n {
            s -= l[k * n + i] * b[k];
        }
        b[i] = s / l[i * n + i];
    }
}

/// Solves `(L Lᵀ) z = b` in place.
pub fn chol_solve(l: &[f64], n: usize, b: &mut [f64]) {
    forward_sub(l, n, b);
    backward_sub_t(l, n, b);
}

pub fn chol_logdet(l: &[f64], n: usize) -> f64 {
    2.0 * (0..n).map(|i| l[i * n + i].ln()).sum::<f64>()
}

pub fn to_dmatrix(m: &[f64], rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_row_slice(rows, cols, m)
}

/// Row-major flattening.
pub fn from_dmatrix(m: &DMatrix<f64>) -> Vec<f64> {
    let mut out = Vec::with_capacity(m.nrows() * m.ncols());
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            out.push(m[(r, c)]);
        }
    }
    out
}

fn singular_values(m: &DMatrix<f64>) -> Vec<f64> {
    m.clone().svd(false, false).singular_values.iter().copied().collect()
}

/// Relative threshold below which singular values count as zero.
pub const RANK_TOL: f64 = 1e-12;

/// κ(A) = σ_max / σ_min over the nonzero singular values.
pub fn condition_number(m: &DMatrix<f64>) -> Result<f64> {
    let sv = singular_values(m);
    let max = sv.iter().copied().fold(0.0_f64, f64::max);
    if max == 0.0 || !max.is_finite() {
        return Err(Error::invalid("matrix", "zero or non-finite matrix"));
    }
    let min = sv
        .iter()
        .copied()
        .filter(|&s| s > RANK_TOL * max)
        .fold(f64::INFINITY, f64::min);
    Ok(max / min)
}

/// Moore-Penrose pseudo-inverse.
pub fn pinv(m: &DMatrix<f64>) -> DMatrix<f64> {
    let svd = m.clone().svd(true, true);
    let max = svd.singular_values.iter().copied().fold(0.0_f64, f64::max);
    let eps = RANK_TOL * max.max(f64::MIN_POSITIVE);
    svd.pseudo_inverse(eps)
        .expect("svd computed with both factors")
}

/// Inverse of a symmetric positive-definite matrix via Cholesky.
pub fn spd_inverse(m: &DMatrix<f64>, context: &'static str) -> Result<DMatrix<f64>> {
    m.clone()
        .cholesky()
        .map(|c| c.inverse())
        .ok_or(Error::Singular(context))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cholesky_solves_spd_system() {
        let a = [4.0, 2.0, 2.0, 3.0];
        let l = cholesky(&a, 2).unwrap();
        let mut b = vec![2.0, 1.0];
        chol_solve(&l, 2, &mut b);
        let back = matvec(&a, 2, &b);
        assert!((back[0] - 2.0).abs() < 1e-14 && (back[1] - 1.0).abs() < 1e-14);
        assert!((chol_logdet(&l, 2) - 8.0_f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        assert!(cholesky(&[1.0, 2.0, 2.0, 1.0], 2).is_none());
    }

    #[test]
    fn condition_number_basic() {
        let d = DMatrix::from_row_slice(2, 2, &[3.0, 0.0, 0.0, 1.0]);
        assert!((condition_number(&d).unwrap() - 3.0).abs() < 1e-12);
        assert!((condition_number(&DMatrix::identity(4, 4)).unwrap() - 1.0).abs() < 1e-12);
        assert!(condition_number(&DMatrix::zeros(2, 3)).is_err());
    }
}
