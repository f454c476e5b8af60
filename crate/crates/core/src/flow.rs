//! Flow matching and the consistency-model output head.
//!
//! Flow matching runs forward in time: `t = 0` is the standard-normal prior
//! and `t = 1` the data, with `x_t = (1 − t) x₀ + t x₁`. This is the reverse of
//! the diffusion convention used everywhere else in the crate (`t = 0` data,
//! `t = 1` noise). The consistency head lives in diffusion time.

use rayon::prelude::*;

use crate::diffusion::ode::{integrate, Solver};
use crate::diffusion::collect_ordered;
use crate::distributions::GaussianMixture;
use crate::error::{check_dim, Error, Result};
use crate::net::{TrainConfig, TrainOutput};
use crate::net::ScoreNetwork;
use crate::rng::{chain_rng, normal_vec, ChainRng};

use rand::Rng;

/// A time-dependent vector field `R^D × [0, 1] → R^D`.
pub trait TimeField: Sync {
    fn dim(&self) -> usize;
    fn eval(&self, x: &[f64], t: f64) -> Vec<f64>;
}

impl TimeField for ScoreNetwork {
    fn dim(&self) -> usize {
        ScoreNetwork::dim(self)
    }

    fn eval(&self, x: &[f64], t: f64) -> Vec<f64> {
        self.forward(x, t)
    }
}

impl<T: TimeField + ?Sized> TimeField for &T {
    fn dim(&self) -> usize {
        (**self).dim()
    }

    fn eval(&self, x: &[f64], t: f64) -> Vec<f64> {
        (**self).eval(x, t)
    }
}

/// Closure-backed field.
pub struct FnField<F> {
    dim: usize,
    f: F,
}

impl<F> FnField<F>
where
    F: Fn(&[f64], f64) -> Vec<f64> + Sync,
{
    pub fn new(dim: usize, f: F) -> Self {
        FnField { dim, f }
    }
}

impl<F> TimeField for FnField<F>
where
    F: Fn(&[f64], f64) -> Vec<f64> + Sync,
{
    fn dim(&self) -> usize {
        self.dim
    }

    fn eval(&self, x: &[f64], t: f64) -> Vec<f64> {
        (self.f)(x, t)
    }
}

/// Exact marginal velocity transporting `N(0, s₀² I)` to `N(0, s₁² I)` along
/// straight-line conditional paths.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianVelocity {
    pub dim: usize,
    pub var0: f64,
    pub var1: f64,
}

impl GaussianVelocity {
    pub fn new(dim: usize, var0: f64, var1: f64) -> Result<Self> {
        if !(var0 > 0.0 && var1 > 0.0 && var0.is_finite() && var1.is_finite()) {
            return Err(Error::invalid("variance", "must be positive and finite"));
        }
        Ok(GaussianVelocity { dim, var0, var1 })
    }

    /// `v*(x, t) = k(t) x` with `k = (t s₁² − (1−t) s₀²) / ((1−t)² s₀² + t² s₁²)`.
    pub fn gain(&self, t: f64) -> f64 {
        let u = 1.0 - t;
        (t * self.var1 - u * self.var0) / (u * u * self.var0 + t * t * self.var1)
    }
}

impl TimeField for GaussianVelocity {
    fn dim(&self) -> usize {
        self.dim
    }

    fn eval(&self, x: &[f64], t: f64) -> Vec<f64> {
        let k = self.gain(t);
        x.iter().map(|v| k * v).collect()
    }
}

/// Interpolant and conditional target velocity `x₁ − x₀`.
pub fn fm_pair(x0: &[f64], x1: &[f64], t: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    check_dim("data draw", x0.len(), x1.len())?;
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::invalid("t", "must lie in [0, 1]"));
    }
    let xt = x0.iter().zip(x1).map(|(a, b)| (1.0 - t) * a + t * b).collect();
    let v = x0.iter().zip(x1).map(|(a, b)| b - a).collect();
    Ok((xt, v))
}

struct FmDraw {
    xt: Vec<f64>,
    t: f64,
    target: Vec<f64>,
}

fn draw(data: &GaussianMixture, rng: &mut ChainRng) -> FmDraw {
    let x0 = normal_vec(rng, data.dim());
    let x1 = data.sample_with(rng).point;
    let t: f64 = rng.random();
    let (xt, target) = fm_pair(&x0, &x1, t).expect("matching dimensions");
    FmDraw { xt, t, target }
}

/// Monte Carlo estimate of `E‖(x₁ − x₀) − v_θ(x_t, t)‖²` with `x₀ ~ N(0, I)`,
/// `x₁ ~ data`, `t ~ U[0, 1]`, drawn from stream `(seed, 0)`.
pub fn fm_loss<V: TimeField + ?Sized>(v: &V, data: &GaussianMixture, batch: usize, seed: u64) -> Result<f64> {
    check_dim("velocity field", data.dim(), v.dim())?;
    if batch == 0 {
        return Err(Error::invalid("batch", "must be at least 1"));
    }
    let mut rng = chain_rng(seed, 0);
    let mut total = 0.0;
    for _ in 0..batch {
        let d = draw(data, &mut rng);
        let out = v.eval(&d.xt, d.t);
        total += d.target.iter().zip(&out).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
    }
    Ok(total / batch as f64)
}

fn fm_batch(net: &ScoreNetwork, data: &GaussianMixture, batch: usize, rng: &mut ChainRng, grad: &mut [f64]) -> f64 {
    grad.iter_mut().for_each(|g| *g = 0.0);
    let scale = 1.0 / batch as f64;
    let mut total = 0.0;
    for _ in 0..batch {
        let d = draw(data, rng);
        let mut loss = 0.0;
        net.accumulate_grad(
            &d.xt,
            d.t,
            |out| {
                out.iter()
                    .zip(&d.target)
                    .map(|(o, v)| {
                        loss += (o - v) * (o - v);
                        2.0 * scale * (o - v)
                    })
                    .collect()
            },
            grad,
        );
        total += loss;
    }
    total * scale
}

/// Minibatch loss and parameter gradient.
pub fn fm_loss_and_grad(net: &ScoreNetwork, data: &GaussianMixture, batch: usize, seed: u64) -> Result<(f64, Vec<f64>)> {
    check_dim("velocity network", data.dim(), net.dim())?;
    if batch == 0 {
        return Err(Error::invalid("batch", "must be at least 1"));
    }
    let mut grad = vec![0.0; net.n_params()];
    let loss = fm_batch(net, data, batch, &mut chain_rng(seed, 0), &mut grad);
    Ok((loss, grad))
}

/// Gradient descent on the flow-matching objective; `time_sampling` in the
/// config is ignored since `t` is always uniform on `[0, 1]`.
pub fn train_fm(net: &ScoreNetwork, data: &GaussianMixture, cfg: &TrainConfig) -> Result<TrainOutput> {
    cfg.validate()?;
    check_dim("velocity network", data.dim(), net.dim())?;
    let mut net = net.clone();
    let mut rng = chain_rng(cfg.seed, 0);
    let mut grad = vec![0.0; net.n_params()];
    let mut velocity = vec![0.0; net.n_params()];
    let mut losses = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let loss = fm_batch(&net, data, cfg.batch_size, &mut rng, &mut grad);
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
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::Diverged {
                iteration: step,
                detail: "parameters are not finite".into(),
            });
        }
    }
    Ok(TrainOutput { net, losses })
}

/// Integrates `dx/dt = v(x, t)` from `t = 0` to `t = 1` for every point.
pub fn fm_transport<V: TimeField + ?Sized>(v: &V, x0: &[Vec<f64>], steps: usize, method: Solver) -> Result<Vec<Vec<f64>>> {
    if steps == 0 {
        return Err(Error::invalid("steps", "must be at least 1"));
    }
    for x in x0 {
        check_dim("transport input", v.dim(), x.len())?;
    }
    let field = |x: &[f64], t: f64| v.eval(x, t);
    let out = x0
        .par_iter()
        .map(|x| integrate(method, &field, x, 0.0, 1.0, steps, None))
        .collect();
    collect_ordered(out)
}

/// Default data scale of the skip/out coefficients.
pub const CONSISTENCY_SIGMA_D: f64 = 0.5;

/// `c(x, t) = c_skip(t) x + c_out(t) F(x, t)` with `c_skip(ξ) = 1` and
/// `c_out(ξ) = 0`.
#[derive(Debug, Clone)]
pub struct ConsistencyHead<F> {
    xi: f64,
    sigma_d: f64,
    inner: F,
}

impl<F: TimeField> ConsistencyHead<F> {
    pub fn new(inner: F, xi: f64) -> Result<Self> {
        Self::with_sigma_d(inner, xi, CONSISTENCY_SIGMA_D)
    }

    pub fn with_sigma_d(inner: F, xi: f64, sigma_d: f64) -> Result<Self> {
        if !(xi > 0.0 && xi < 1.0) {
            return Err(Error::invalid("xi", "must lie in (0, 1)"));
        }
        if !(sigma_d > 0.0 && sigma_d.is_finite()) {
            return Err(Error::invalid("sigma_d", "must be positive"));
        }
        let head = ConsistencyHead { xi, sigma_d, inner };
        assert_eq!(head.c_skip(xi), 1.0);
        assert_eq!(head.c_out(xi), 0.0);
        Ok(head)
    }

    pub fn xi(&self) -> f64 {
        self.xi
    }

    pub fn inner(&self) -> &F {
        &self.inner
    }

    pub fn c_skip(&self, t: f64) -> f64 {
        let s2 = self.sigma_d * self.sigma_d;
        let u = t - self.xi;
        s2 / (u * u + s2)
    }

    pub fn c_out(&self, t: f64) -> f64 {
        let u = t - self.xi;
        self.sigma_d * u / (u * u + self.sigma_d * self.sigma_d).sqrt()
    }
}

pub fn consistency_apply<F: TimeField>(head: &ConsistencyHead<F>, x: &[f64], t: f64) -> Result<Vec<f64>> {
    check_dim("consistency input", head.inner.dim(), x.len())?;
    if !(t >= head.xi) || t > 1.0 {
        return Err(Error::invalid("t", format!("must lie in [{}, 1]", head.xi)));
    }
    let (a, b) = (head.c_skip(t), head.c_out(t));
    if b == 0.0 {
        return Ok(x.iter().map(|v| a * v).collect());
    }
    let f = head.inner.eval(x, t);
    Ok(x.iter().zip(&f).map(|(xi, fi)| a * xi + b * fi).collect())
}
