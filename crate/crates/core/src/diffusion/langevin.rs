//! Unadjusted Langevin dynamics `x ← x + ζ s(x) + √(2ζ) ε`.

use rayon::prelude::*;

use super::{collect_ordered, ensure_finite, SampleBatch};
use crate::error::{Error, Result};
use crate::rng::{chain_rng, normal_vec};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LangevinConfig {
    pub zeta: f64,
    pub steps: usize,
    /// With noise off the update is plain gradient ascent on log p.
    pub inject_noise: bool,
}

impl LangevinConfig {
    pub fn new(zeta: f64, steps: usize) -> Self {
        LangevinConfig {
            zeta,
            steps,
            inject_noise: true,
        }
    }
}

pub fn langevin_step(x: &[f64], score: &[f64], zeta: f64, noise: &[f64]) -> Vec<f64> {
    let sd = (2.0 * zeta).sqrt();
    x.iter()
        .zip(score)
        .zip(noise)
        .map(|((xi, si), zi)| xi + zeta * si + sd * zi)
        .collect()
}

/// Runs `cfg.steps` Langevin updates on every chain of `init`, chain `c`
/// drawing from stream `(seed, c)`.
pub fn langevin<F>(score: F, init: &SampleBatch, cfg: LangevinConfig, seed: u64) -> Result<SampleBatch>
where
    F: Fn(&[f64]) -> Vec<f64> + Sync,
{
    if !(cfg.zeta > 0.0 && cfg.zeta.is_finite()) {
        return Err(Error::invalid("zeta", format!("must be positive, got {}", cfg.zeta)));
    }
    let results: Vec<Result<Vec<f64>>> = init
        .points
        .par_iter()
        .zip(init.chains.par_iter())
        .map(|(p, &c)| {
            let mut rng = chain_rng(seed, c);
            let mut x = p.clone();
            let zeros = vec![0.0; x.len()];
            for step in 0..cfg.steps {
                let s = score(&x);
                x = if cfg.inject_noise {
                    langevin_step(&x, &s, cfg.zeta, &normal_vec(&mut rng, x.len()))
                } else {
                    langevin_step(&x, &s, cfg.zeta, &zeros)
                };
                ensure_finite(&x, step)?;
            }
            Ok(x)
        })
        .collect();
    Ok(SampleBatch {
        points: collect_ordered(results)?,
        step: init.step,
        seed,
        chains: init.chains.clone(),
    })
}
