//! Score models: anything that maps `(x, noise level)` to `∇ₓ log p_t(x)`.

use crate::diffusion::schedule::NoiseLevel;
use crate::distributions::GaussianMixture;

/// Central-difference step used by the default Jacobian.
pub const JACOBIAN_FD_STEP: f64 = 1e-6;

pub trait ScoreModel: Sync {
    fn dim(&self) -> usize;

    fn score(&self, x: &[f64], level: NoiseLevel) -> Vec<f64>;

    /// Row-major Jacobian `∂s_r/∂x_c`. Falls back to central differences.
    fn score_jacobian(&self, x: &[f64], level: NoiseLevel) -> Vec<f64> {
        let d = self.dim();
        let mut jac = vec![0.0; d * d];
        let mut xp = x.to_vec();
        for c in 0..d {
            let h = JACOBIAN_FD_STEP * (1.0 + x[c].abs());
            xp[c] = x[c] + h;
            let sp = self.score(&xp, level);
            xp[c] = x[c] - h;
            let sm = self.score(&xp, level);
            xp[c] = x[c];
            for r in 0..d {
                jac[r * d + c] = (sp[r] - sm[r]) / (2.0 * h);
            }
        }
        jac
    }
}

/// The exact score of the perturbed mixture marginal at every level.
impl ScoreModel for GaussianMixture {
    fn dim(&self) -> usize {
        GaussianMixture::dim(self)
    }

    fn score(&self, x: &[f64], level: NoiseLevel) -> Vec<f64> {
        self.score_at(x, level)
    }

    fn score_jacobian(&self, x: &[f64], level: NoiseLevel) -> Vec<f64> {
        self.score_jacobian_at(x, level)
    }
}

impl<T: ScoreModel + ?Sized> ScoreModel for &T {
    fn dim(&self) -> usize {
        (**self).dim()
    }

    fn score(&self, x: &[f64], level: NoiseLevel) -> Vec<f64> {
        (**self).score(x, level)
    }

    fn score_jacobian(&self, x: &[f64], level: NoiseLevel) -> Vec<f64> {
        (**self).score_jacobian(x, level)
    }
}

/// Adapts a closure into a [`ScoreModel`].
pub struct FnScore<F> {
    dim: usize,
    f: F,
}

impl<F> FnScore<F>
where
    F: Fn(&[f64], NoiseLevel) -> Vec<f64> + Sync,
{
    pub fn new(dim: usize, f: F) -> Self {
        FnScore { dim, f }
    }
}

impl<F> ScoreModel for FnScore<F>
where
    F: Fn(&[f64], NoiseLevel) -> Vec<f64> + Sync,
{
    fn dim(&self) -> usize {
        self.dim
    }

    fn score(&self, x: &[f64], level: NoiseLevel) -> Vec<f64> {
        (self.f)(x, level)
    }
}

/// ε-prediction from a score: `ε = −σ s`.
pub fn score_to_eps(score: &[f64], sigma: f64) -> Vec<f64> {
    score.iter().map(|s| -sigma * s).collect()
}

/// Inverse of [`score_to_eps`]; requires `sigma > 0`.
pub fn eps_to_score(eps: &[f64], sigma: f64) -> Vec<f64> {
    eps.iter().map(|e| -e / sigma).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn analytic_jacobian_matches_fd_default() {
        let g = GaussianMixture::new(
            vec![0.3, 0.7],
            vec![vec![1.0, -1.0], vec![-2.0, 0.5]],
            vec![vec![1.0, 0.2, 0.2, 0.5], vec![0.7, 0.0, 0.0, 1.3]],
        )
        .unwrap();
        let fd = FnScore::new(2, |x: &[f64], l| g.score_at(x, l));
        let level = NoiseLevel { t: 0.3, alpha: 0.8, sigma: 0.6 };
        for x in [[0.1, 0.2], [-1.0, 1.5], [2.0, -0.3]] {
            let a = g.score_jacobian(&x, level);
            let n = fd.score_jacobian(&x, level);
            for (p, q) in a.iter().zip(&n) {
                assert!((p - q).abs() < 1e-7 * (1.0 + p.abs()), "{a:?} vs {n:?}");
            }
        }
    }

    #[test]
    fn eps_roundtrip() {
        let s = [1.5, -2.0];
        let e = score_to_eps(&s, 0.25);
        assert_eq!(e, vec![-0.375, 0.5]);
        assert_eq!(eps_to_score(&e, 0.25), s.to_vec());
    }
}
