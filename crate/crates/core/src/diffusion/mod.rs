//! Forward perturbation, Langevin dynamics, ancestral reverse-SDE sampling,
//! probability-flow ODE solvers and the Tweedie denoiser.

pub mod langevin;
pub mod ode;
pub mod schedule;
pub mod sde;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::rng::{chain_rng, normal_vec};
use crate::score::ScoreModel;

pub use langevin::{langevin, LangevinConfig};
pub use ode::{pf_ode, write_trajectory_csv, OdeMethod, OdeOutput};
pub use schedule::{build_schedule, NoiseLevel, NoiseSchedule, ScheduleKind, ScheduleSpec};
pub use sde::{ancestral_step, reverse_sde, reverse_sde_from};

/// A batch of independent chains.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleBatch {
    pub points: Vec<Vec<f64>>,
    /// Schedule step the points currently sit at.
    pub step: usize,
    /// Seed the chains' streams derive from.
    pub seed: u64,
    /// Stream identifier of each chain.
    pub chains: Vec<u64>,
}

impl SampleBatch {
    pub fn new(points: Vec<Vec<f64>>, step: usize, seed: u64) -> Self {
        let chains = (0..points.len() as u64).collect();
        SampleBatch {
            points,
            step,
            seed,
            chains,
        }
    }

    /// `n` draws of `N(0, variance·I)` on per-chain streams.
    pub fn gaussian(n: usize, dim: usize, variance: f64, step: usize, seed: u64) -> Self {
        let sd = variance.sqrt();
        let points = (0..n as u64)
            .into_par_iter()
            .map(|c| {
                let mut rng = chain_rng(seed, c);
                normal_vec(&mut rng, dim).into_iter().map(|z| sd * z).collect()
            })
            .collect();
        SampleBatch::new(points, step, seed)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.points.first().map_or(0, Vec::len)
    }

    /// All coordinates of column `d`.
    pub fn column(&self, d: usize) -> Vec<f64> {
        self.points.iter().map(|p| p[d]).collect()
    }
}

/// Collects per-chain results in chain order, surfacing the lowest-index failure.
pub(crate) fn collect_ordered<T>(results: Vec<Result<T>>) -> Result<Vec<T>> {
    results.into_iter().collect()
}

pub(crate) fn ensure_finite(x: &[f64], step: usize) -> Result<()> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite { step })
    }
}

/// One draw of the closed-form forward kernel at step `i`.
pub fn forward_sample(x0: &[f64], sched: &NoiseSchedule, i: usize, seed: u64) -> Result<Vec<f64>> {
    if i == 0 || i > sched.steps() {
        return Err(Error::invalid("step", format!("need 1 <= i <= {}, got {i}", sched.steps())));
    }
    let eps = normal_vec(&mut chain_rng(seed, 0), x0.len());
    Ok(forward_with_noise(x0, sched.level(i), &eps))
}

/// `alpha x0 + sigma eps` for a supplied noise vector.
pub fn forward_with_noise(x0: &[f64], level: NoiseLevel, eps: &[f64]) -> Vec<f64> {
    x0.iter()
        .zip(eps)
        .map(|(x, e)| level.alpha * x + level.sigma * e)
        .collect()
}

/// Posterior-mean denoiser `x̂₀ = (x_t + σ_t² s(x_t)) / α_t`.
pub fn tweedie_from_score(x: &[f64], level: NoiseLevel, score: &[f64]) -> Vec<f64> {
    let var = level.sigma * level.sigma;
    x.iter()
        .zip(score)
        .map(|(xi, si)| (xi + var * si) / level.alpha)
        .collect()
}

/// Tweedie estimate at step `i` using the given score model.
pub fn tweedie<S: ScoreModel + ?Sized>(x: &[f64], i: usize, score: &S, sched: &NoiseSchedule) -> Result<Vec<f64>> {
    if i == 0 || i > sched.steps() {
        return Err(Error::invalid("step", format!("need 1 <= i <= {}, got {i}", sched.steps())));
    }
    crate::error::check_dim("tweedie input", score.dim(), x.len())?;
    let level = sched.level(i);
    if level.alpha <= 0.0 {
        return Err(Error::Unsupported("tweedie needs alpha_t > 0".into()));
    }
    let s = score.score(x, level);
    Ok(tweedie_from_score(x, level, &s))
}
