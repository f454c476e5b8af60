//! Gaussian-mixture sources with exact densities, scores and noisy marginals.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diffusion::schedule::{NoiseLevel, NoiseSchedule, ScheduleKind};
use crate::error::{check_dim, Error, Result};
use crate::linalg;
use crate::rng::{chain_rng, std_normal};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, PartialEq)]
struct Component {
    mean: Vec<f64>,
    /// Row-major D×D covariance.
    cov: Vec<f64>,
    chol: Vec<f64>,
    logdet: f64,
    diagonal: bool,
}

impl Component {
    fn new(mean: Vec<f64>, cov: Vec<f64>) -> Result<Self> {
        let d = mean.len();
        check_dim("covariance", d * d, cov.len())?;
        for r in 0..d {
            for c in 0..r {
                let (a, b) = (cov[r * d + c], cov[c * d + r]);
                if (a - b).abs() > 1e-12 * (1.0 + a.abs().max(b.abs())) {
                    return Err(Error::invalid("covariance", "not symmetric"));
                }
            }
        }
        let chol = linalg::cholesky(&cov, d)
            .ok_or_else(|| Error::invalid("covariance", "not positive definite"))?;
        let logdet = linalg::chol_logdet(&chol, d);
        let diagonal = (0..d).all(|r| (0..d).all(|c| r == c || cov[r * d + c] == 0.0));
        Ok(Component {
            mean,
            cov,
            chol,
            logdet,
            diagonal,
        })
    }
}

/// A finite mixture of multivariate normals.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMixture {
    dim: usize,
    weights: Vec<f64>,
    log_weights: Vec<f64>,
    components: Vec<Component>,
    labels: Option<Vec<u32>>,
}

/// A draw together with the index of the component that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSample {
    pub point: Vec<f64>,
    pub label: usize,
}

/// Serializable mixture description: either `cov_diag` or full `cov` rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixtureSpec {
    pub weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cov_diag: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cov: Option<Vec<Vec<Vec<f64>>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<Vec<u32>>,
}

impl MixtureSpec {
    pub fn build(&self) -> Result<GaussianMixture> {
        let gmm = match (&self.cov_diag, &self.cov) {
            (Some(diag), None) => {
                GaussianMixture::from_diagonal(self.weights.clone(), self.means.clone(), diag.clone())?
            }
            (None, Some(full)) => {
                let covs = full
                    .iter()
                    .map(|rows| rows.iter().flatten().copied().collect())
                    .collect();
                GaussianMixture::new(self.weights.clone(), self.means.clone(), covs)?
            }
            (None, None) => {
                let d = self.means.first().map_or(0, Vec::len);
                let diag = vec![vec![1.0; d]; self.means.len()];
                GaussianMixture::from_diagonal(self.weights.clone(), self.means.clone(), diag)?
            }
            (Some(_), Some(_)) => {
                return Err(Error::invalid("source", "give either cov_diag or cov, not both"))
            }
        };
        match &self.labels {
            Some(l) => gmm.with_labels(l.clone()),
            None => Ok(gmm),
        }
    }
}

impl GaussianMixture {
    /// Builds a mixture from weights, means and row-major covariances.
    pub fn new(weights: Vec<f64>, means: Vec<Vec<f64>>, covs: Vec<Vec<f64>>) -> Result<Self> {
        let k = weights.len();
        if k == 0 {
            return Err(Error::invalid("weights", "need at least one component"));
        }
        check_dim("means", k, means.len())?;
        check_dim("covariances", k, covs.len())?;
        let dim = means[0].len();
        if dim == 0 {
            return Err(Error::invalid("means", "dimension must be at least 1"));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::invalid("weights", "must be finite and nonnegative"));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::invalid("weights", format!("sum to {total}, not 1")));
        }
        let mut components = Vec::with_capacity(k);
        for (mean, cov) in means.into_iter().zip(covs) {
            check_dim("mean", dim, mean.len())?;
            if mean.iter().any(|m| !m.is_finite()) {
                return Err(Error::invalid("means", "must be finite"));
            }
            components.push(Component::new(mean, cov)?);
        }
        let log_weights = weights.iter().map(|w| w.ln()).collect();
        Ok(GaussianMixture {
            dim,
            weights,
            log_weights,
            components,
            labels: None,
        })
    }

    pub fn from_diagonal(weights: Vec<f64>, means: Vec<Vec<f64>>, diags: Vec<Vec<f64>>) -> Result<Self> {
        let covs = diags
            .iter()
            .map(|d| {
                let n = d.len();
                let mut c = vec![0.0; n * n];
                for (i, v) in d.iter().enumerate() {
                    c[i * n + i] = *v;
                }
                c
            })
            .collect();
        Self::new(weights, means, covs)
    }

    /// N(0, I_dim).
    pub fn standard_normal(dim: usize) -> Self {
        Self::from_diagonal(vec![1.0], vec![vec![0.0; dim]], vec![vec![1.0; dim]])
            .expect("standard normal is valid")
    }

    /// Single Gaussian N(mean, cov).
    pub fn gaussian(mean: Vec<f64>, cov: Vec<f64>) -> Result<Self> {
        Self::new(vec![1.0], vec![mean], vec![cov])
    }

    /// Attaches per-component class labels.
    pub fn with_labels(mut self, labels: Vec<u32>) -> Result<Self> {
        check_dim("labels", self.components.len(), labels.len())?;
        self.labels = Some(labels);
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_components(&self) -> usize {
        self.components.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn mean_of(&self, k: usize) -> &[f64] {
        &self.components[k].mean
    }

    pub fn covariance_of(&self, k: usize) -> &[f64] {
        &self.components[k].cov
    }

    pub fn labels(&self) -> Option<&[u32]> {
        self.labels.as_deref()
    }

    /// Overall mixture mean.
    pub fn mean(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.dim];
        for (w, c) in self.weights.iter().zip(&self.components) {
            for (o, v) in m.iter_mut().zip(&c.mean) {
                *o += w * v;
            }
        }
        m
    }

    /// Overall mixture covariance (law of total covariance), row-major.
    pub fn covariance(&self) -> Vec<f64> {
        let d = self.dim;
        let mu = self.mean();
        let mut cov = vec![0.0; d * d];
        for (w, c) in self.weights.iter().zip(&self.components) {
            for r in 0..d {
                for col in 0..d {
                    cov[r * d + col] +=
                        w * (c.cov[r * d + col] + (c.mean[r] - mu[r]) * (c.mean[col] - mu[col]));
                }
            }
        }
        cov
    }

    fn check_point(&self, x: &[f64]) -> Result<()> {
        check_dim("point", self.dim, x.len())
    }

    /// Log-density of component `k` under the perturbation `alpha x + sigma ε`;
    /// writes the scaled residual `C⁻¹(x − αμ)` into `v`.
    fn component_into(&self, k: usize, x: &[f64], alpha: f64, var: f64, sq_alpha: f64, v: &mut [f64]) -> f64 {
        let c = &self.components[k];
        let d = self.dim;
        let mut quad = 0.0;
        let logdet;
        if c.diagonal {
            let mut ld = 0.0;
            for j in 0..d {
                let r = x[j] - alpha * c.mean[j];
                let s = sq_alpha * c.cov[j * d + j] + var;
                v[j] = r / s;
                quad += r * v[j];
                ld += s.ln();
            }
            logdet = ld;
        } else {
            for j in 0..d {
                v[j] = x[j] - alpha * c.mean[j];
            }
            let residual = v.to_vec();
            if sq_alpha == 1.0 && var == 0.0 {
                linalg::chol_solve(&c.chol, d, v);
                logdet = c.logdet;
            } else {
                let mut cov = c.cov.iter().map(|x| sq_alpha * x).collect::<Vec<_>>();
                for j in 0..d {
                    cov[j * d + j] += var;
                }
                let l = linalg::cholesky(&cov, d).expect("perturbed covariance stays positive definite");
                linalg::chol_solve(&l, d, v);
                logdet = linalg::chol_logdet(&l, d);
            }
            quad = linalg::dot(&residual, v);
        }
        -0.5 * (quad + logdet + d as f64 * LN_2PI)
    }

    fn component_terms(&self, k: usize, x: &[f64], alpha: f64, var: f64, sq_alpha: f64) -> (f64, Vec<f64>) {
        let mut v = vec![0.0; self.dim];
        let lp = self.component_into(k, x, alpha, var, sq_alpha, &mut v);
        (lp, v)
    }

    /// Returns `(log p(x), log responsibilities, per-component C⁻¹ residuals)`.
    fn responsibilities(&self, x: &[f64], level: NoiseLevel) -> (f64, Vec<f64>, Vec<Vec<f64>>) {
        let var = level.sigma * level.sigma;
        let sq_alpha = level.alpha * level.alpha;
        let mut logs = Vec::with_capacity(self.components.len());
        let mut resid = Vec::with_capacity(self.components.len());
        for k in 0..self.components.len() {
            let (lp, v) = self.component_terms(k, x, level.alpha, var, sq_alpha);
            logs.push(self.log_weights[k] + lp);
            resid.push(v);
        }
        let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = logs.iter().map(|l| (l - max).exp()).sum();
        let total = max + sum.ln();
        let log_r = logs.iter().map(|l| l - total).collect();
        (total, log_r, resid)
    }

    pub fn log_density(&self, x: &[f64]) -> Result<f64> {
        self.check_point(x)?;
        Ok(self.responsibilities(x, NoiseLevel::CLEAN).0)
    }

    /// ∇ₓ log p(x).
    pub fn score(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_point(x)?;
        Ok(self.score_at(x, NoiseLevel::CLEAN))
    }

    /// Component posterior probabilities at `x` under the given perturbation.
    pub fn component_probabilities_at(&self, x: &[f64], level: NoiseLevel) -> Vec<f64> {
        let (_, log_r, _) = self.responsibilities(x, level);
        log_r.into_iter().map(f64::exp).collect()
    }

    /// Log-density of the perturbed marginal `alpha x_0 + sigma ε`.
    pub fn log_density_at(&self, x: &[f64], level: NoiseLevel) -> f64 {
        self.responsibilities(x, level).0
    }

    /// Score of the perturbed marginal, without materializing it. One pass
    /// with a running log-sum-exp.
    pub fn score_at(&self, x: &[f64], level: NoiseLevel) -> Vec<f64> {
        let var = level.sigma * level.sigma;
        let sq_alpha = level.alpha * level.alpha;
        let mut v = vec![0.0; self.dim];
        let mut acc = vec![0.0; self.dim];
        let (mut max, mut sum) = (f64::NEG_INFINITY, 0.0);
        for k in 0..self.components.len() {
            if self.weights[k] == 0.0 {
                continue;
            }
            let l = self.log_weights[k] + self.component_into(k, x, level.alpha, var, sq_alpha, &mut v);
            if l > max {
                let scale = (max - l).exp();
                sum *= scale;
                acc.iter_mut().for_each(|a| *a *= scale);
                max = l;
            }
            let w = (l - max).exp();
            sum += w;
            for (a, vi) in acc.iter_mut().zip(&v) {
                *a -= w * vi;
            }
        }
        acc.iter_mut().for_each(|a| *a /= sum);
        acc
    }

    /// Responsibilities and per-component scores `−C_k⁻¹(x − αμ_k)` of the
    /// perturbed mixture.
    pub fn component_scores_at(&self, x: &[f64], level: NoiseLevel) -> (Vec<f64>, Vec<Vec<f64>>) {
        let (_, log_r, resid) = self.responsibilities(x, level);
        let probs = log_r.into_iter().map(f64::exp).collect();
        let scores = resid.into_iter().map(|v| v.into_iter().map(|c| -c).collect()).collect();
        (probs, scores)
    }

    /// Jacobian of the perturbed-marginal score, row-major D×D.
    pub fn score_jacobian_at(&self, x: &[f64], level: NoiseLevel) -> Vec<f64> {
        let d = self.dim;
        let var = level.sigma * level.sigma;
        let sq_alpha = level.alpha * level.alpha;
        let (_, log_r, resid) = self.responsibilities(x, level);
        let mut s = vec![0.0; d];
        let mut jac = vec![0.0; d * d];
        for (k, (lr, v)) in log_r.iter().zip(&resid).enumerate() {
            let r = lr.exp();
            if r == 0.0 {
                continue;
            }
            // −r C_k⁻¹ + r s_k s_kᵀ, with s_k = −v.
            for col in 0..d {
                let mut e = vec![0.0; d];
                e[col] = 1.0;
                let p = self.precision_apply(k, &e, var, sq_alpha);
                for row in 0..d {
                    jac[row * d + col] += r * (v[row] * v[col] - p[row]);
                }
            }
            for (o, vi) in s.iter_mut().zip(v) {
                *o -= r * vi;
            }
        }
        for row in 0..d {
            for col in 0..d {
                jac[row * d + col] -= s[row] * s[col];
            }
        }
        jac
    }

    /// `C_k⁻¹ e` for the perturbed covariance of component `k`.
    fn precision_apply(&self, k: usize, e: &[f64], var: f64, sq_alpha: f64) -> Vec<f64> {
        let c = &self.components[k];
        let d = self.dim;
        let mut v = e.to_vec();
        if c.diagonal {
            for j in 0..d {
                v[j] /= sq_alpha * c.cov[j * d + j] + var;
            }
        } else {
            let mut cov = c.cov.iter().map(|x| sq_alpha * x).collect::<Vec<_>>();
            for j in 0..d {
                cov[j * d + j] += var;
            }
            let l = linalg::cholesky(&cov, d).expect("perturbed covariance stays positive definite");
            linalg::chol_solve(&l, d, &mut v);
        }
        v
    }

    fn draw_one<R: Rng + ?Sized>(&self, rng: &mut R) -> LabeledSample {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut label = self.components.len() - 1;
        for (k, w) in self.weights.iter().enumerate() {
            acc += w;
            if u < acc && *w > 0.0 {
                label = k;
                break;
            }
        }
        // Guard against rounding landing on a zero-weight tail component.
        while self.weights[label] == 0.0 {
            label -= 1;
        }
        let c = &self.components[label];
        let d = self.dim;
        let z: Vec<f64> = (0..d).map(|_| std_normal(rng)).collect();
        let mut point = c.mean.clone();
        for r in 0..d {
            for k in 0..=r {
                point[r] += c.chol[r * d + k] * z[k];
            }
        }
        LabeledSample { point, label }
    }

    /// Draws `n` i.i.d. labeled samples from one seeded stream.
    pub fn sample(&self, n: usize, seed: u64) -> Vec<LabeledSample> {
        let mut rng = chain_rng(seed, 0);
        (0..n).map(|_| self.draw_one(&mut rng)).collect()
    }

    pub fn sample_points(&self, n: usize, seed: u64) -> Vec<Vec<f64>> {
        self.sample(n, seed).into_iter().map(|s| s.point).collect()
    }

    /// Draws one sample from an existing stream.
    pub fn sample_with<R: Rng + ?Sized>(&self, rng: &mut R) -> LabeledSample {
        self.draw_one(rng)
    }

    fn perturb_squares(&self, alpha: f64, sq_alpha: f64, var: f64) -> GaussianMixture {
        let d = self.dim;
        let components = self
            .components
            .iter()
            .map(|c| {
                let mean = c.mean.iter().map(|m| alpha * m).collect();
                let mut cov: Vec<f64> = c.cov.iter().map(|v| sq_alpha * v).collect();
                for j in 0..d {
                    cov[j * d + j] += var;
                }
                Component::new(mean, cov).expect("perturbation preserves positive definiteness")
            })
            .collect();
        GaussianMixture {
            dim: d,
            weights: self.weights.clone(),
            log_weights: self.log_weights.clone(),
            components,
            labels: self.labels.clone(),
        }
    }

    /// Mixture of `alpha X + sigma ε`, `X ~ self`.
    pub fn perturb(&self, alpha: f64, sigma: f64) -> GaussianMixture {
        self.perturb_squares(alpha, alpha * alpha, sigma * sigma)
    }

    /// Closed-form noisy marginal at step `i` of `sched`.
    pub fn perturbed_marginal(&self, sched: &NoiseSchedule, i: usize) -> Result<GaussianMixture> {
        if i > sched.steps() {
            return Err(Error::invalid("step", format!("{i} beyond schedule length {}", sched.steps())));
        }
        Ok(match sched.kind() {
            ScheduleKind::Vp => {
                let ab = sched.alpha_bar(i);
                self.perturb_squares(ab.sqrt(), ab, 1.0 - ab)
            }
            ScheduleKind::Ve => {
                let s = sched.ve_sigma(i);
                self.perturb_squares(1.0, 1.0, s * s)
            }
        })
    }
}
