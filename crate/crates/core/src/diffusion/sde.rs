//! Ancestral discretization of the reverse-time SDE.
//!
//! VP: `x_{i−1} = (x_i + β_i s(x_i, i)) / √(1−β_i) + √β_i ε`
//!
//! VE: `x_{i−1} = x_i + (σ_i² − σ_{i−1}²) s(x_i, σ_i) + √(σ_i² − σ_{i−1}²) ε`, σ₀ = 0.
//!
//! The VP drift carries the full `β_i s` term; that is the step whose
//! continuous limit is `dx = −β[x/2 + s] dt + √β dw̄` and which leaves
//! N(0, I) invariant when `s(x) = −x`.

use rayon::prelude::*;

use super::{collect_ordered, ensure_finite, NoiseSchedule, SampleBatch, ScheduleKind};
use crate::error::{check_dim, Error, Result};
use crate::rng::{chain_rng, normal_vec, ChainRng};
use crate::score::ScoreModel;

/// Applies one reverse step from `i` to `i − 1` given the score at `(x, i)`
/// and a standard-normal draw `noise`.
pub fn ancestral_step(sched: &NoiseSchedule, i: usize, x: &[f64], score: &[f64], noise: &[f64]) -> Vec<f64> {
    match sched.kind() {
        ScheduleKind::Vp => {
            let beta = sched.beta(i);
            let inv = 1.0 / (1.0 - beta).sqrt();
            let sd = beta.sqrt();
            x.iter()
                .zip(score)
                .zip(noise)
                .map(|((xi, si), zi)| inv * (xi + beta * si) + sd * zi)
                .collect()
        }
        ScheduleKind::Ve => {
            let hi = sched.ve_sigma(i);
            let lo = sched.ve_sigma(i - 1);
            let dv = hi * hi - lo * lo;
            let sd = dv.sqrt();
            x.iter()
                .zip(score)
                .zip(noise)
                .map(|((xi, si), zi)| xi + dv * si + sd * zi)
                .collect()
        }
    }
}

/// Runs one chain from step `start` down to 0.
pub(crate) fn run_chain<S: ScoreModel + ?Sized>(
    score: &S,
    sched: &NoiseSchedule,
    mut x: Vec<f64>,
    start: usize,
    rng: &mut ChainRng,
) -> Result<Vec<f64>> {
    let d = x.len();
    for i in (1..=start).rev() {
        let s = score.score(&x, sched.level(i));
        let z = normal_vec(rng, d);
        x = ancestral_step(sched, i, &x, &s, &z);
        ensure_finite(&x, i)?;
    }
    Ok(x)
}

/// Samples `n` chains starting from the terminal prior (VP: N(0, I); VE:
/// N(0, σ_N² I)). Chain `c` draws from stream `(seed, c)`.
pub fn reverse_sde<S: ScoreModel + ?Sized>(score: &S, sched: &NoiseSchedule, n: usize, seed: u64) -> Result<SampleBatch> {
    if n == 0 {
        return Err(Error::invalid("n", "need at least one chain"));
    }
    let d = score.dim();
    let sd = sched.terminal_variance().sqrt();
    let start = sched.steps();
    let results: Vec<Result<Vec<f64>>> = (0..n as u64)
        .into_par_iter()
        .map(|c| {
            let mut rng = chain_rng(seed, c);
            let x0: Vec<f64> = normal_vec(&mut rng, d).into_iter().map(|z| sd * z).collect();
            run_chain(score, sched, x0, start, &mut rng)
        })
        .collect();
    Ok(SampleBatch::new(collect_ordered(results)?, 0, seed))
}

/// Continues the chains of `init` (sitting at `init.step`) down to step 0.
pub fn reverse_sde_from<S: ScoreModel + ?Sized>(score: &S, sched: &NoiseSchedule, init: &SampleBatch) -> Result<SampleBatch> {
    if init.step > sched.steps() {
        return Err(Error::invalid("step", "batch step beyond schedule"));
    }
    for p in &init.points {
        check_dim("batch point", score.dim(), p.len())?;
    }
    let results: Vec<Result<Vec<f64>>> = init
        .points
        .par_iter()
        .zip(init.chains.par_iter())
        .map(|(p, &c)| {
            let mut rng = chain_rng(init.seed, c);
            run_chain(score, sched, p.clone(), init.step, &mut rng)
        })
        .collect();
    Ok(SampleBatch {
        points: collect_ordered(results)?,
        step: 0,
        seed: init.seed,
        chains: init.chains.clone(),
    })
}
