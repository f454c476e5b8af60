//! Ground-truth machinery: conjugate Gaussian posteriors, grid search,
//! empirical distances, moments, error metrics and feasibility.

use nalgebra::{DMatrix, DVector};

use crate::channel::ForwardOperator;
use crate::error::{check_dim, Error, Result};
use crate::linalg::{self, norm_sq};

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPosterior {
    pub mean: Vec<f64>,
    /// Row-major D×D.
    pub covariance: Vec<f64>,
}

/// Posterior of `x ~ N(μ, Σ)` given `y = A x + n`, `n ~ N(0, σ_n² I)`.
pub fn conjugate_posterior(
    prior_mean: &[f64],
    prior_cov: &[f64],
    a: &[f64],
    rows: usize,
    sigma_n: f64,
    y: &[f64],
) -> Result<GaussianPosterior> {
    let d = prior_mean.len();
    check_dim("prior covariance", d * d, prior_cov.len())?;
    check_dim("operator", rows * d, a.len())?;
    check_dim("measurement", rows, y.len())?;
    if !(sigma_n > 0.0 && sigma_n.is_finite()) {
        return Err(Error::invalid("sigma_n", "must be positive"));
    }
    let sigma = DMatrix::from_row_slice(d, d, prior_cov);
    let prec = linalg::spd_inverse(&sigma, "prior covariance")?;
    let am = DMatrix::from_row_slice(rows, d, a);
    let inv_var = 1.0 / (sigma_n * sigma_n);
    let post_prec = &prec + am.transpose() * &am * inv_var;
    let post_cov = linalg::spd_inverse(&post_prec, "posterior precision")?;
    let rhs = &prec * DVector::from_column_slice(prior_mean) + am.transpose() * DVector::from_column_slice(y) * inv_var;
    let mean = &post_cov * rhs;
    let mut cov = linalg::from_dmatrix(&post_cov);
    // Symmetrize away rounding.
    for r in 0..d {
        for c in r + 1..d {
            let v = 0.5 * (cov[r * d + c] + cov[c * d + r]);
            cov[r * d + c] = v;
            cov[c * d + r] = v;
        }
    }
    Ok(GaussianPosterior {
        mean: mean.iter().copied().collect(),
        covariance: cov,
    })
}

/// Values of a function on a regular 1D or 2D grid (first axis outermost).
#[derive(Debug, Clone, PartialEq)]
pub struct GridValues {
    pub axes: Vec<Vec<f64>>,
    pub values: Vec<f64>,
}

pub fn grid_eval<F>(f: F, bounds: &[(f64, f64)], resolution: &[usize]) -> Result<GridValues>
where
    F: Fn(&[f64]) -> f64,
{
    if bounds.is_empty() || bounds.len() > 2 {
        return Err(Error::invalid("bounds", "grid search supports 1 or 2 dimensions"));
    }
    check_dim("resolution", bounds.len(), resolution.len())?;
    if resolution.iter().any(|&n| n < 16) {
        return Err(Error::invalid("resolution", "need at least 16 points per axis"));
    }
    let axes: Vec<Vec<f64>> = bounds
        .iter()
        .zip(resolution)
        .map(|(&(lo, hi), &n)| (0..n).map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64).collect())
        .collect();
    let mut values = Vec::new();
    let mut p = vec![0.0; axes.len()];
    let inner = if axes.len() == 2 { axes[1].len() } else { 1 };
    for idx in 0..axes[0].len() * inner {
        p[0] = axes[0][idx / inner];
        if axes.len() == 2 {
            p[1] = axes[1][idx % inner];
        }
        let v = f(&p);
        if !v.is_finite() {
            return Err(Error::invalid("grid", format!("non-finite value at {p:?}")));
        }
        values.push(v);
    }
    Ok(GridValues { axes, values })
}

impl GridValues {
    pub fn point(&self, idx: usize) -> Vec<f64> {
        if self.axes.len() == 1 {
            vec![self.axes[0][idx]]
        } else {
            let inner = self.axes[1].len();
            vec![self.axes[0][idx / inner], self.axes[1][idx % inner]]
        }
    }

    /// Index of the maximum; the lowest index wins ties.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (k, v) in self.values.iter().enumerate() {
            if *v > self.values[best] {
                best = k;
            }
        }
        best
    }

    /// Cell widths per axis.
    pub fn spacing(&self) -> Vec<f64> {
        self.axes.iter().map(|a| a[1] - a[0]).collect()
    }

    /// Nearest grid index to `p`, or `None` outside the grid by more than half a cell.
    pub fn nearest(&self, p: &[f64]) -> Option<usize> {
        let mut idx = 0;
        for (axis, (&v, h)) in self.axes.iter().zip(p.iter().zip(self.spacing())) {
            let k = ((v - axis[0]) / h).round();
            if k < 0.0 || k > (axis.len() - 1) as f64 {
                return None;
            }
            idx = idx * axis.len() + k as usize;
        }
        Some(idx)
    }

    /// Log-value threshold of the highest-density region holding `mass` of
    /// the normalized `exp(values)`.
    pub fn hpd_threshold(&self, mass: f64) -> f64 {
        let max = self.values[self.argmax()];
        let mut w: Vec<(f64, f64)> = self.values.iter().map(|v| (*v, (v - max).exp())).collect();
        let total: f64 = w.iter().map(|p| p.1).sum();
        w.sort_by(|a, b| b.0.total_cmp(&a.0));
        let mut acc = 0.0;
        for (v, p) in &w {
            acc += p / total;
            if acc >= mass {
                return *v;
            }
        }
        w.last().map_or(f64::NEG_INFINITY, |p| p.0)
    }
}

/// Brute-force argmax of `f` on a regular grid (ties → lowest index).
pub fn grid_map<F>(f: F, bounds: &[(f64, f64)], resolution: &[usize]) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> f64,
{
    let g = grid_eval(f, bounds, resolution)?;
    Ok(g.point(g.argmax()))
}

fn sorted(a: &[f64]) -> Vec<f64> {
    let mut v = a.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

/// Exact 1D Wasserstein-1 distance between two empirical measures.
///
/// Equal sizes reduce to the mean absolute difference of sorted samples;
/// unequal sizes integrate the difference of the quantile functions.
pub fn w1_1d(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::invalid("samples", "empty input"));
    }
    let (sa, sb) = (sorted(a), sorted(b));
    if sa.len() == sb.len() {
        return Ok(sa.iter().zip(&sb).map(|(x, y)| (x - y).abs()).sum::<f64>() / sa.len() as f64);
    }
    let (na, nb) = (sa.len() as f64, sb.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut u = 0.0;
    let mut total = 0.0;
    while i < sa.len() && j < sb.len() {
        let next = ((i + 1) as f64 / na).min((j + 1) as f64 / nb);
        total += (next - u) * (sa[i] - sb[j]).abs();
        u = next;
        if (i + 1) as f64 / na <= next {
            i += 1;
        }
        if (j + 1) as f64 / nb <= next {
            j += 1;
        }
    }
    Ok(total)
}

/// Sample mean and unbiased covariance (row-major).
pub fn moments(samples: &[Vec<f64>]) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = samples.len();
    if n < 2 {
        return Err(Error::invalid("samples", "need at least two samples"));
    }
    let d = samples[0].len();
    for s in samples {
        check_dim("sample", d, s.len())?;
    }
    let mut mean = vec![0.0; d];
    for s in samples {
        for (m, v) in mean.iter_mut().zip(s) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut cov = vec![0.0; d * d];
    for s in samples {
        for r in 0..d {
            let dr = s[r] - mean[r];
            for c in 0..d {
                cov[r * d + c] += dr * (s[c] - mean[c]);
            }
        }
    }
    cov.iter_mut().for_each(|c| *c /= (n - 1) as f64);
    Ok((mean, cov))
}

/// `(mse, psnr)`; identical inputs give `psnr = +∞`.
pub fn mse_psnr(x: &[f64], xhat: &[f64], peak: f64) -> Result<(f64, f64)> {
    check_dim("estimate", x.len(), xhat.len())?;
    if x.is_empty() {
        return Err(Error::invalid("x", "empty input"));
    }
    if !(peak > 0.0) {
        return Err(Error::invalid("peak", "must be positive"));
    }
    let mse = x.iter().zip(xhat).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / x.len() as f64;
    let psnr = if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (peak * peak / mse).log10()
    };
    Ok((mse, psnr))
}

/// `10 log10(‖clean‖² / ‖noisy − clean‖²)`; `+∞` when noiseless.
pub fn measured_snr(clean: &[f64], noisy: &[f64]) -> Result<f64> {
    check_dim("noisy signal", clean.len(), noisy.len())?;
    let signal = norm_sq(clean);
    if signal == 0.0 {
        return Err(Error::invalid("clean", "zero signal"));
    }
    let noise: f64 = clean.iter().zip(noisy).map(|(a, b)| (b - a) * (b - a)).sum();
    Ok(if noise == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (signal / noise).log10()
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeasibleSetQuery {
    pub epsilon: f64,
}

impl FeasibleSetQuery {
    /// Expected residual energy `m σ_n²`.
    pub fn expected_residual(op: &ForwardOperator) -> Self {
        FeasibleSetQuery {
            epsilon: op.out_dim() as f64 * op.sigma_n() * op.sigma_n(),
        }
    }
}

/// `‖y − A(x)‖² ≤ ε` with `A` applied without noise.
pub fn feasible(y: &[f64], op: &ForwardOperator, x: &[f64], q: FeasibleSetQuery) -> Result<bool> {
    if !(q.epsilon >= 0.0 && q.epsilon.is_finite()) {
        return Err(Error::invalid("epsilon", "must be finite and nonnegative"));
    }
    check_dim("measurement", op.out_dim(), y.len())?;
    let ax = op.mean_apply(x)?;
    let r: f64 = y.iter().zip(&ax).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(r <= q.epsilon)
}

/// Two-sample Kolmogorov-Smirnov statistic `sup |F_a − F_b|`.
pub fn ks_statistic(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::invalid("samples", "empty input"));
    }
    let (sa, sb) = (sorted(a), sorted(b));
    let (na, nb) = (sa.len() as f64, sb.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < sa.len() && j < sb.len() {
        let v = sa[i].min(sb[j]);
        while i < sa.len() && sa[i] <= v {
            i += 1;
        }
        while j < sb.len() && sb[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    Ok(d)
}

/// Asymptotic two-sample KS critical value, `c(α) √((n+m)/(n m))`,
/// for α ∈ {0.05, 0.01}.
pub fn ks_critical(n: usize, m: usize, alpha: f64) -> Result<f64> {
    let c = if alpha == 0.05 {
        1.358
    } else if alpha == 0.01 {
        1.628
    } else {
        return Err(Error::invalid("alpha", "tabulated for 0.05 and 0.01 only"));
    };
    let (n, m) = (n as f64, m as f64);
    Ok(c * ((n + m) / (n * m)).sqrt())
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut r = vec![0.0; v.len()];
    let mut k = 0;
    while k < idx.len() {
        let mut e = k;
        while e + 1 < idx.len() && v[idx[e + 1]] == v[idx[k]] {
            e += 1;
        }
        let avg = (k + e) as f64 / 2.0 + 1.0;
        for &i in &idx[k..=e] {
            r[i] = avg;
        }
        k = e + 1;
    }
    r
}

/// Spearman rank correlation (average ranks for ties).
pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64> {
    check_dim("paired samples", a.len(), b.len())?;
    if a.len() < 2 {
        return Err(Error::invalid("samples", "need at least two pairs"));
    }
    let (ra, rb) = (ranks(a), ranks(b));
    let n = a.len() as f64;
    let ma = ra.iter().sum::<f64>() / n;
    let mb = rb.iter().sum::<f64>() / n;
    let mut num = 0.0;
    let mut da = 0.0;
    let mut db = 0.0;
    for (x, y) in ra.iter().zip(&rb) {
        num += (x - ma) * (y - mb);
        da += (x - ma) * (x - ma);
        db += (y - mb) * (y - mb);
    }
    if da == 0.0 || db == 0.0 {
        return Err(Error::invalid("samples", "constant input has no rank correlation"));
    }
    Ok(num / (da * db).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_point_moments() {
        let (m, c) = moments(&[vec![0.0], vec![2.0]]).unwrap();
        assert_eq!((m[0], c[0]), (1.0, 2.0));
        assert!(moments(&[vec![1.0]]).is_err());
    }

    #[test]
    fn psnr_examples() {
        let (mse, psnr) = mse_psnr(&[0.0, 0.0], &[1.0, 1.0], 1.0).unwrap();
        assert_eq!((mse, psnr), (1.0, 0.0));
        assert_eq!(mse_psnr(&[1.0], &[1.0], 1.0).unwrap().1, f64::INFINITY);
        let (_, p) = mse_psnr(&[0.0], &[0.1], 1.0).unwrap();
        assert!((p - 20.0).abs() < 1e-12);
    }

    #[test]
    fn w1_shift_and_unequal_sizes() {
        let a = [0.0, 1.0, 5.0];
        let b = [2.5, 3.5, 7.5];
        assert!((w1_1d(&a, &b).unwrap() - 2.5).abs() < 1e-15);
        // {0, 1} vs {0, 0, 1, 1}: same measure.
        assert!(w1_1d(&[0.0, 1.0], &[0.0, 0.0, 1.0, 1.0]).unwrap().abs() < 1e-15);
        assert!((w1_1d(&[0.0], &[1.0, 3.0]).unwrap() - 2.0).abs() < 1e-15);
    }

    #[test]
    fn grid_ties_take_lowest_index() {
        let p = grid_map(|_| 1.0, &[(-1.0, 1.0)], &[16]).unwrap();
        assert_eq!(p, vec![-1.0]);
        let bimodal = |x: &[f64]| -(x[0] * x[0] - 1.0).powi(2);
        assert_eq!(grid_map(bimodal, &[(-2.0, 2.0)], &[41]).unwrap(), vec![-1.0]);
        assert!(grid_map(|_| f64::NAN, &[(-1.0, 1.0)], &[16]).is_err());
        assert!(grid_map(|_| 0.0, &[(-1.0, 1.0)], &[8]).is_err());
    }

    #[test]
    fn spearman_and_ks() {
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap(), -1.0);
        assert_eq!(ks_statistic(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(ks_statistic(&[1.0, 2.0], &[3.0, 4.0]).unwrap(), 1.0);
    }

    #[test]
    fn snr_examples() {
        assert_eq!(measured_snr(&[1.0], &[1.0]).unwrap(), f64::INFINITY);
        let s = measured_snr(&[1.0, 0.0], &[1.0, 0.1f64.sqrt()]).unwrap();
        assert!((s - 10.0).abs() < 1e-12);
    }
}
