//! Fixed-step solvers for the probability-flow ODE
//! `dx/dt = f(x, t) − ½ g(t)² s(x, t)`, integrated from t = 1 down to t = 0.

use std::io::Write;

use rayon::prelude::*;

use super::langevin::langevin_step;
use super::{collect_ordered, ensure_finite, NoiseSchedule, SampleBatch};
use crate::error::{check_dim, Error, Result};
use crate::rng::{chain_rng, normal_vec};
use crate::score::ScoreModel;

/// Explicit one-step schemes shared by the diffusion and flow samplers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Solver {
    Euler,
    Rk4,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OdeMethod {
    Euler,
    Rk4,
    /// Euler predictor followed by one Langevin corrector step with
    /// `ζ = r σ(t)²` at the new time.
    PredictorCorrector { r: f64, seed: u64 },
}

impl OdeMethod {
    pub fn pc(seed: u64) -> Self {
        OdeMethod::PredictorCorrector { r: 0.1, seed }
    }
}

fn axpy(x: &[f64], h: f64, v: &[f64]) -> Vec<f64> {
    x.iter().zip(v).map(|(a, b)| a + h * b).collect()
}

/// One step of `solver` for `dx/dt = field(x, t)` from `t` to `t + h`.
pub fn solver_step<F>(solver: Solver, field: &F, x: &[f64], t: f64, h: f64) -> Vec<f64>
where
    F: Fn(&[f64], f64) -> Vec<f64> + ?Sized,
{
    match solver {
        Solver::Euler => axpy(x, h, &field(x, t)),
        Solver::Rk4 => {
            let k1 = field(x, t);
            let k2 = field(&axpy(x, 0.5 * h, &k1), t + 0.5 * h);
            let k3 = field(&axpy(x, 0.5 * h, &k2), t + 0.5 * h);
            let k4 = field(&axpy(x, h, &k3), t + h);
            x.iter()
                .enumerate()
                .map(|(j, xi)| xi + h / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]))
                .collect()
        }
    }
}

/// Integrates from `t0` to `t1` in `steps` uniform steps. When `trajectory`
/// is given, every intermediate state (including the start) is pushed to it.
pub fn integrate<F>(
    solver: Solver,
    field: &F,
    x0: &[f64],
    t0: f64,
    t1: f64,
    steps: usize,
    mut trajectory: Option<&mut Vec<Vec<f64>>>,
) -> Result<Vec<f64>>
where
    F: Fn(&[f64], f64) -> Vec<f64> + ?Sized,
{
    if steps == 0 {
        return Err(Error::invalid("steps", "must be at least 1"));
    }
    let h = (t1 - t0) / steps as f64;
    let mut x = x0.to_vec();
    if let Some(tr) = trajectory.as_deref_mut() {
        tr.push(x.clone());
    }
    for k in 0..steps {
        let t = t0 + k as f64 * h;
        x = solver_step(solver, field, &x, t, h);
        ensure_finite(&x, k + 1)?;
        if let Some(tr) = trajectory.as_deref_mut() {
            tr.push(x.clone());
        }
    }
    Ok(x)
}

/// Probability-flow velocity at time `t`.
pub fn pf_field<S: ScoreModel + ?Sized>(score: &S, sched: &NoiseSchedule, x: &[f64], t: f64) -> Vec<f64> {
    let (a, b) = sched.flow_coefficients(t);
    let s = score.score(x, sched.level_at(t));
    x.iter().zip(&s).map(|(xi, si)| a * xi + b * si).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct OdeOutput {
    pub batch: SampleBatch,
    /// Per chain, the state after each step (first entry is the start).
    pub trajectory: Option<Vec<Vec<Vec<f64>>>>,
}

/// Solves the probability-flow ODE for every chain of `x_t` from t = 1 to 0.
pub fn pf_ode<S: ScoreModel + ?Sized>(
    score: &S,
    sched: &NoiseSchedule,
    method: OdeMethod,
    steps: usize,
    x_t: &SampleBatch,
    keep_trajectory: bool,
) -> Result<OdeOutput> {
    if steps == 0 {
        return Err(Error::invalid("steps", "must be at least 1"));
    }
    for p in &x_t.points {
        check_dim("batch point", score.dim(), p.len())?;
        ensure_finite(p, sched.steps())?;
    }
    let field = |x: &[f64], t: f64| pf_field(score, sched, x, t);
    type Endpoint = (Vec<f64>, Vec<Vec<f64>>);
    let results: Vec<Result<Endpoint>> = x_t
        .points
        .par_iter()
        .zip(x_t.chains.par_iter())
        .map(|(p, &chain)| {
            let mut traj = Vec::new();
            let tr = keep_trajectory.then_some(&mut traj);
            let end = match method {
                OdeMethod::Euler => integrate(Solver::Euler, &field, p, 1.0, 0.0, steps, tr)?,
                OdeMethod::Rk4 => integrate(Solver::Rk4, &field, p, 1.0, 0.0, steps, tr)?,
                OdeMethod::PredictorCorrector { r, seed } => {
                    predictor_corrector(score, sched, p, steps, r, seed, chain, tr)?
                }
            };
            Ok((end, traj))
        })
        .collect();
    let results = collect_ordered(results)?;
    let mut points = Vec::with_capacity(results.len());
    let mut trajectories = Vec::with_capacity(results.len());
    for (p, t) in results {
        points.push(p);
        trajectories.push(t);
    }
    Ok(OdeOutput {
        batch: SampleBatch {
            points,
            step: 0,
            seed: x_t.seed,
            chains: x_t.chains.clone(),
        },
        trajectory: keep_trajectory.then_some(trajectories),
    })
}

#[allow(clippy::too_many_arguments)]
fn predictor_corrector<S: ScoreModel + ?Sized>(
    score: &S,
    sched: &NoiseSchedule,
    x0: &[f64],
    steps: usize,
    r: f64,
    seed: u64,
    chain: u64,
    mut trajectory: Option<&mut Vec<Vec<f64>>>,
) -> Result<Vec<f64>> {
    if !(r > 0.0 && r.is_finite()) {
        return Err(Error::invalid("r", "corrector ratio must be positive"));
    }
    let mut rng = chain_rng(seed, chain);
    let h = -1.0 / steps as f64;
    let mut x = x0.to_vec();
    if let Some(tr) = trajectory.as_deref_mut() {
        tr.push(x.clone());
    }
    for k in 0..steps {
        let t = 1.0 + k as f64 * h;
        let t_next = (1.0 + (k + 1) as f64 * h).max(0.0);
        x = axpy(&x, h, &pf_field(score, sched, &x, t));
        let level = sched.level_at(t_next);
        let zeta = r * level.variance();
        if zeta > 0.0 {
            let s = score.score(&x, level);
            x = langevin_step(&x, &s, zeta, &normal_vec(&mut rng, x.len()));
        }
        ensure_finite(&x, k + 1)?;
        if let Some(tr) = trajectory.as_deref_mut() {
            tr.push(x.clone());
        }
    }
    Ok(x)
}

/// Writes trajectories as CSV rows `chain,step,coordinate,value`.
pub fn write_trajectory_csv<W: Write>(mut out: W, chains: &[u64], trajectory: &[Vec<Vec<f64>>]) -> Result<()> {
    writeln!(out, "chain,step,coordinate,value")?;
    for (chain, states) in chains.iter().zip(trajectory) {
        for (step, state) in states.iter().enumerate() {
            for (d, v) in state.iter().enumerate() {
                writeln!(out, "{chain},{step},{d},{}", crate::harness::csv::format_f64(*v))?;
            }
        }
    }
    Ok(())
}
