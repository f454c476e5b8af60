//! Denoising and implicit score-matching objectives and the DSM training loop.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::ScoreNetwork;
use crate::diffusion::{NoiseLevel, NoiseSchedule};
use crate::distributions::GaussianMixture;
use crate::error::{check_dim, Error, Result};
use crate::rng::{chain_rng, normal_vec, ChainRng};
use crate::score::ScoreModel;

/// How the noise level of each DSM sample is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimeSampling {
    /// Uniform over steps `1..=N`.
    Uniform,
    /// Always step `i`.
    Fixed(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub steps: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Heavy-ball coefficient; 0 is plain gradient descent.
    #[serde(default)]
    pub momentum: f64,
    #[serde(default = "uniform")]
    pub time_sampling: TimeSampling,
}

fn uniform() -> TimeSampling {
    TimeSampling::Uniform
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            steps: 20_000,
            batch_size: 64,
            seed: 0,
            momentum: 0.0,
            time_sampling: TimeSampling::Uniform,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("learning_rate", "must be positive"));
        }
        if self.steps == 0 {
            return Err(Error::invalid("steps", "must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size", "must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::invalid("momentum", "must lie in [0, 1)"));
        }
        Ok(())
    }
}

struct DsmDraw {
    x: Vec<f64>,
    level: NoiseLevel,
    /// `∇ log q(x̃ | x₀) = −ε / σ`.
    target: Vec<f64>,
}

fn check_sampling(sched: &NoiseSchedule, sampling: TimeSampling) -> Result<()> {
    if let TimeSampling::Fixed(i) = sampling {
        if i == 0 || i > sched.steps() {
            return Err(Error::invalid("time_sampling", format!("fixed step must lie in 1..={}", sched.steps())));
        }
    }
    Ok(())
}

fn draw(rng: &mut ChainRng, gmm: &GaussianMixture, sched: &NoiseSchedule, sampling: TimeSampling) -> DsmDraw {
    let i = match sampling {
        TimeSampling::Uniform => rng.random_range(1..=sched.steps()),
        TimeSampling::Fixed(i) => i,
    };
    let level = sched.level(i);
    let x0 = gmm.sample_with(rng).point;
    let eps = normal_vec(rng, x0.len());
    let x = x0
        .iter()
        .zip(&eps)
        .map(|(a, e)| level.alpha * a + level.sigma * e)
        .collect();
    let target = eps.iter().map(|e| -e / level.sigma).collect();
    DsmDraw { x, level, target }
}

fn half_sq_diff(a: &[f64], b: &[f64]) -> f64 {
    0.5 * a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum::<f64>()
}

/// Monte Carlo DSM objective `E ½‖∇log q(x̃|x₀) − s(x̃, t)‖²`.
pub fn dsm_loss<S: ScoreModel + ?Sized>(
    model: &S,
    gmm: &GaussianMixture,
    sched: &NoiseSchedule,
    batch: usize,
    seed: u64,
    sampling: TimeSampling,
) -> Result<f64> {
    if batch == 0 {
        return Err(Error::invalid("batch", "must be at least 1"));
    }
    check_dim("score model", gmm.dim(), model.dim())?;
    check_sampling(sched, sampling)?;
    let mut rng = chain_rng(seed, 0);
    let mut total = 0.0;
    for _ in 0..batch {
        let d = draw(&mut rng, gmm, sched, sampling);
        total += half_sq_diff(&model.score(&d.x, d.level), &d.target);
    }
    Ok(total / batch as f64)
}

fn dsm_batch(
    net: &ScoreNetwork,
    gmm: &GaussianMixture,
    sched: &NoiseSchedule,
    batch: usize,
    rng: &mut ChainRng,
    sampling: TimeSampling,
    grad: &mut [f64],
) -> f64 {
    grad.iter_mut().for_each(|g| *g = 0.0);
    let mut total = 0.0;
    let scale = 1.0 / batch as f64;
    for _ in 0..batch {
        let d = draw(rng, gmm, sched, sampling);
        let out = net.accumulate_grad(
            &d.x,
            d.level.t,
            |s| s.iter().zip(&d.target).map(|(p, q)| scale * (p - q)).collect(),
            grad,
        );
        total += half_sq_diff(&out, &d.target);
    }
    total * scale
}

/// DSM value and its parameter gradient on the same draws as [`dsm_loss`].
pub fn dsm_loss_and_grad(
    net: &ScoreNetwork,
    gmm: &GaussianMixture,
    sched: &NoiseSchedule,
    batch: usize,
    seed: u64,
    sampling: TimeSampling,
) -> Result<(f64, Vec<f64>)> {
    if batch == 0 {
        return Err(Error::invalid("batch", "must be at least 1"));
    }
    check_dim("score network", gmm.dim(), net.dim())?;
    check_sampling(sched, sampling)?;
    let mut grad = vec![0.0; net.n_params()];
    let loss = dsm_batch(net, gmm, sched, batch, &mut chain_rng(seed, 0), sampling, &mut grad);
    Ok((loss, grad))
}

fn check_ism_inputs(dim: usize, samples: &[Vec<f64>], weights: Option<&[f64]>) -> Result<()> {
    if dim > 3 {
        return Err(Error::Unsupported(format!(
            "exact-trace score matching is limited to D <= 3, got D = {dim}"
        )));
    }
    if samples.is_empty() {
        return Err(Error::invalid("samples", "need at least one sample"));
    }
    for s in samples {
        check_dim("ism sample", dim, s.len())?;
    }
    if let Some(w) = weights {
        check_dim("ism weights", samples.len(), w.len())?;
    }
    Ok(())
}

/// Implicit score-matching objective `E[½‖s‖² + tr ∇ₓ s]` at level `level`.
///
/// Without weights the expectation is the sample mean; with weights it is
/// `Σ w_k f(x_k)`, which turns a grid with density-times-width weights into a
/// quadrature rule.
pub fn ism_loss<S: ScoreModel + ?Sized>(
    model: &S,
    samples: &[Vec<f64>],
    weights: Option<&[f64]>,
    level: NoiseLevel,
) -> Result<f64> {
    let d = model.dim();
    check_ism_inputs(d, samples, weights)?;
    let mut total = 0.0;
    for (k, x) in samples.iter().enumerate() {
        let s = model.score(x, level);
        let j = model.score_jacobian(x, level);
        let trace: f64 = (0..d).map(|r| j[r * d + r]).sum();
        let v = 0.5 * s.iter().map(|v| v * v).sum::<f64>() + trace;
        total += weights.map_or(v, |w| w[k] * v);
    }
    Ok(match weights {
        Some(_) => total,
        None => total / samples.len() as f64,
    })
}

/// ISM value and exact parameter gradient (reverse mode through the tangents).
pub fn ism_loss_and_grad(
    net: &ScoreNetwork,
    samples: &[Vec<f64>],
    weights: Option<&[f64]>,
    t: f64,
) -> Result<(f64, Vec<f64>)> {
    check_ism_inputs(net.dim(), samples, weights)?;
    let mut grad = vec![0.0; net.n_params()];
    let mut total = 0.0;
    let mean_w = 1.0 / samples.len() as f64;
    for (k, x) in samples.iter().enumerate() {
        let w = weights.map_or(mean_w, |w| w[k]);
        total += w * net.accumulate_ism_grad(x, t, w, &mut grad);
    }
    Ok((total, grad))
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub net: ScoreNetwork,
    /// Minibatch loss at every step.
    pub losses: Vec<f64>,
}

/// Gradient descent on the DSM objective. Single-threaded; one random stream
/// `(cfg.seed, 0)` supplies every draw, so the result is a pure function of
/// the inputs.
pub fn train_dsm(net: &ScoreNetwork, gmm: &GaussianMixture, sched: &NoiseSchedule, cfg: &TrainConfig) -> Result<TrainOutput> {
    cfg.validate()?;
    check_dim("score network", gmm.dim(), net.dim())?;
    check_sampling(sched, cfg.time_sampling)?;
    let mut net = net.clone();
    let mut rng = chain_rng(cfg.seed, 0);
    let mut grad = vec![0.0; net.n_params()];
    let mut velocity = vec![0.0; net.n_params()];
    let mut losses = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let loss = dsm_batch(&net, gmm, sched, cfg.batch_size, &mut rng, cfg.time_sampling, &mut grad);
        if !loss.is_finite() {
            return Err(Error::Diverged {
                iteration: step,
                detail: format!("loss became {loss}"),
            });
        }
        losses.push(loss);
        let params = net.params_mut();
        for k in 0..params.len() {
            velocity[k] = cfg.momentum * velocity[k] - cfg.learning_rate * grad[k];
            params[k] += velocity[k];
        }
        if let Some(k) = params.iter().position(|p| !p.is_finite()) {
            return Err(Error::Diverged {
                iteration: step,
                detail: format!("parameter {k} is not finite"),
            });
        }
    }
    Ok(TrainOutput { net, losses })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::{Activation, TimeEmbedding};

    /// Single affine layer computing `−x` for any time.
    pub(crate) fn negative_identity(dim: usize) -> ScoreNetwork {
        let mut net = ScoreNetwork::zeros(dim, &[], Activation::Identity, TimeEmbedding::Scalar).unwrap();
        let cols = dim + 1;
        let mut p = vec![0.0; net.n_params()];
        for r in 0..dim {
            p[r * cols + r] = -1.0;
        }
        net.set_params(p).unwrap();
        net
    }

    #[test]
    fn zero_network_ism_is_zero() {
        let net = ScoreNetwork::zeros(1, &[4], Activation::Tanh, TimeEmbedding::Scalar).unwrap();
        let v = ism_loss(&net, &[vec![0.3], vec![-2.0]], None, NoiseLevel::CLEAN).unwrap();
        assert_eq!(v, 0.0);
    }

    #[test]
    fn ism_rejects_high_dim() {
        let g = GaussianMixture::standard_normal(4);
        assert!(matches!(
            ism_loss(&g, &[vec![0.0; 4]], None, NoiseLevel::CLEAN),
            Err(Error::Unsupported(_))
        ));
    }

    #[test]
    fn dsm_deterministic_and_nonnegative() {
        let g = GaussianMixture::standard_normal(1);
        let sched = NoiseSchedule::vp_linear(1e-4, 0.02, 100).unwrap();
        let net = ScoreNetwork::default_arch(1, 3).unwrap();
        let a = dsm_loss(&net, &g, &sched, 256, 4, TimeSampling::Uniform).unwrap();
        let b = dsm_loss(&net, &g, &sched, 256, 4, TimeSampling::Uniform).unwrap();
        assert_eq!(a, b);
        assert!(a >= 0.0);
        let (c, _) = dsm_loss_and_grad(&net, &g, &sched, 256, 4, TimeSampling::Uniform).unwrap();
        assert!((a - c).abs() < 1e-12 * (1.0 + a));
    }

    #[test]
    fn negative_identity_is_minus_x() {
        let net = negative_identity(2);
        assert_eq!(net.forward(&[1.5, -2.0], 0.7), vec![-1.5, 2.0]);
    }

    #[test]
    fn training_is_reproducible() {
        let g = GaussianMixture::standard_normal(1);
        let sched = NoiseSchedule::vp_linear(1e-4, 0.02, 50).unwrap();
        let net = ScoreNetwork::new(1, &[8], Activation::Tanh, TimeEmbedding::Sinusoidal, 1).unwrap();
        let cfg = TrainConfig {
            steps: 20,
            batch_size: 8,
            ..TrainConfig::default()
        };
        let a = train_dsm(&net, &g, &sched, &cfg).unwrap();
        let b = train_dsm(&net, &g, &sched, &cfg).unwrap();
        assert_eq!(a.net.params(), b.net.params());
        assert!(train_dsm(&net, &g, &sched, &TrainConfig { learning_rate: 0.0, ..cfg }).is_err());
    }

    #[test]
    fn divergence_is_reported() {
        let g = GaussianMixture::standard_normal(1);
        let sched = NoiseSchedule::vp_linear(1e-4, 0.02, 50).unwrap();
        let net = ScoreNetwork::new(1, &[8], Activation::Identity, TimeEmbedding::Scalar, 1).unwrap();
        let cfg = TrainConfig {
            learning_rate: 1e6,
            steps: 200,
            batch_size: 4,
            ..TrainConfig::default()
        };
        assert!(matches!(train_dsm(&net, &g, &sched, &cfg), Err(Error::Diverged { .. })));
    }
}
