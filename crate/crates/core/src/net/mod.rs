//! Small time-conditioned MLP with hand-written forward/backward passes.
//!
//! The network maps `x ⊕ embed(t)` through hidden layers with a smooth
//! activation to a D-vector; the last layer is affine. Parameters live in one
//! flat vector, layer by layer, each layer storing its row-major weight matrix
//! followed by its bias.
//!
//! Besides ordinary backprop the network supports forward-mode tangents with
//! respect to `x` and reverse-mode differentiation of those tangents, which
//! gives exact parameter gradients of Jacobian terms such as `tr(∇ₓ s_θ)`.

mod io;
mod loss;

use serde::{Deserialize, Serialize};

use crate::diffusion::NoiseLevel;
use crate::error::{check_dim, Error, Result};
use crate::rng::{chain_rng, std_normal};
use crate::score::ScoreModel;

pub use io::{load_params, read_params, save_params, write_params};
pub use loss::{dsm_loss, dsm_loss_and_grad, ism_loss, ism_loss_and_grad, train_dsm, TimeSampling, TrainConfig, TrainOutput};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Silu,
    Identity,
}

impl Activation {
    /// `(φ(z), φ'(z), φ''(z))`.
    #[inline]
    fn eval(self, z: f64) -> (f64, f64, f64) {
        match self {
            Activation::Tanh => {
                let a = z.tanh();
                let d = 1.0 - a * a;
                (a, d, -2.0 * a * d)
            }
            Activation::Silu => {
                let s = 1.0 / (1.0 + (-z).exp());
                let d = s + z * s * (1.0 - s);
                let dd = s * (1.0 - s) * (2.0 + z * (1.0 - 2.0 * s));
                (z * s, d, dd)
            }
            Activation::Identity => (z, 1.0, 0.0),
        }
    }

    fn code(self) -> u8 {
        match self {
            Activation::Tanh => 0,
            Activation::Silu => 1,
            Activation::Identity => 2,
        }
    }

    fn from_code(c: u8) -> Option<Self> {
        match c {
            0 => Some(Activation::Tanh),
            1 => Some(Activation::Silu),
            2 => Some(Activation::Identity),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TimeEmbedding {
    /// `t` appended as one feature.
    Scalar,
    /// `sin(πt/2), cos(πt/2), sin(πt), cos(πt)`.
    Sinusoidal,
}

impl TimeEmbedding {
    pub fn width(self) -> usize {
        match self {
            TimeEmbedding::Scalar => 1,
            TimeEmbedding::Sinusoidal => 4,
        }
    }

    pub fn embed(self, t: f64, out: &mut Vec<f64>) {
        match self {
            TimeEmbedding::Scalar => out.push(t),
            TimeEmbedding::Sinusoidal => {
                let h = std::f64::consts::FRAC_PI_2 * t;
                let f = std::f64::consts::PI * t;
                out.extend_from_slice(&[h.sin(), h.cos(), f.sin(), f.cos()]);
            }
        }
    }

    fn code(self) -> u8 {
        match self {
            TimeEmbedding::Scalar => 0,
            TimeEmbedding::Sinusoidal => 1,
        }
    }

    fn from_code(c: u8) -> Option<Self> {
        match c {
            0 => Some(TimeEmbedding::Scalar),
            1 => Some(TimeEmbedding::Sinusoidal),
            _ => None,
        }
    }
}

/// Fully connected `s_θ(x, t)`; also used as the velocity network of flow matching.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreNetwork {
    dim: usize,
    activation: Activation,
    embedding: TimeEmbedding,
    /// Layer widths, input (D + embedding width) first, output (D) last.
    widths: Vec<usize>,
    params: Vec<f64>,
}

/// Velocity fields share the score network's structure.
pub type VelocityNetwork = ScoreNetwork;

/// Forward pass record: activations and their x-tangents per layer.
struct Trace {
    acts: Vec<Vec<f64>>,
    tans: Option<Vec<Vec<f64>>>,
    pre: Vec<Vec<f64>>,
    pre_tans: Option<Vec<Vec<f64>>>,
}

impl ScoreNetwork {
    /// Random network: weights `N(0, 1/fan_in)`, biases zero.
    pub fn new(dim: usize, hidden: &[usize], activation: Activation, embedding: TimeEmbedding, seed: u64) -> Result<Self> {
        let mut net = Self::zeros(dim, hidden, activation, embedding)?;
        let mut rng = chain_rng(seed, 0);
        let mut off = 0;
        for l in 0..net.widths.len() - 1 {
            let (i, o) = (net.widths[l], net.widths[l + 1]);
            let sd = 1.0 / (i as f64).sqrt();
            for w in &mut net.params[off..off + i * o] {
                *w = sd * std_normal(&mut rng);
            }
            off += i * o + o;
        }
        Ok(net)
    }

    pub fn zeros(dim: usize, hidden: &[usize], activation: Activation, embedding: TimeEmbedding) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("dim", "must be at least 1"));
        }
        if hidden.contains(&0) {
            return Err(Error::invalid("hidden", "layer widths must be positive"));
        }
        let mut widths = vec![dim + embedding.width()];
        widths.extend_from_slice(hidden);
        widths.push(dim);
        let n = widths.windows(2).map(|w| w[0] * w[1] + w[1]).sum();
        Ok(ScoreNetwork {
            dim,
            activation,
            embedding,
            widths,
            params: vec![0.0; n],
        })
    }

    /// Default architecture: two hidden layers of width 32, SiLU, sinusoidal time.
    pub fn default_arch(dim: usize, seed: u64) -> Result<Self> {
        Self::new(dim, &[32, 32], Activation::Silu, TimeEmbedding::Sinusoidal, seed)
    }

    pub fn from_params(
        dim: usize,
        hidden: &[usize],
        activation: Activation,
        embedding: TimeEmbedding,
        params: Vec<f64>,
    ) -> Result<Self> {
        let mut net = Self::zeros(dim, hidden, activation, embedding)?;
        net.set_params(params)?;
        Ok(net)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn embedding(&self) -> TimeEmbedding {
        self.embedding
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn hidden(&self) -> &[usize] {
        &self.widths[1..self.widths.len() - 1]
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn set_params(&mut self, params: Vec<f64>) -> Result<()> {
        check_dim("parameter vector", self.params.len(), params.len())?;
        if let Some(k) = params.iter().position(|p| !p.is_finite()) {
            return Err(Error::invalid("params", format!("entry {k} is not finite")));
        }
        self.params = params;
        Ok(())
    }

    /// Weight matrix and bias of layer `l` (0-based).
    pub fn layer(&self, l: usize) -> (&[f64], &[f64]) {
        let off: usize = self.widths[..l + 1]
            .windows(2)
            .map(|w| w[0] * w[1] + w[1])
            .sum();
        let (i, o) = (self.widths[l], self.widths[l + 1]);
        (&self.params[off..off + i * o], &self.params[off + i * o..off + i * o + o])
    }

    pub(crate) fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn input(&self, x: &[f64], t: f64) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.widths[0]);
        v.extend_from_slice(x);
        self.embedding.embed(t, &mut v);
        v
    }

    fn trace(&self, x: &[f64], t: f64, dir: Option<&[f64]>) -> Trace {
        let n_layers = self.widths.len() - 1;
        let mut acts = Vec::with_capacity(n_layers + 1);
        let mut pre = Vec::with_capacity(n_layers);
        let mut tans = dir.map(|d| {
            let mut v = d.to_vec();
            v.resize(self.widths[0], 0.0);
            vec![v]
        });
        let mut pre_tans = dir.map(|_| Vec::with_capacity(n_layers));
        acts.push(self.input(x, t));
        let mut off = 0;
        for l in 0..n_layers {
            let (ni, no) = (self.widths[l], self.widths[l + 1]);
            let w = &self.params[off..off + ni * no];
            let b = &self.params[off + ni * no..off + ni * no + no];
            off += ni * no + no;
            let a_prev = &acts[l];
            let mut z = b.to_vec();
            for (r, zr) in z.iter_mut().enumerate() {
                let row = &w[r * ni..(r + 1) * ni];
                *zr += row.iter().zip(a_prev).map(|(p, q)| p * q).sum::<f64>();
            }
            let zt = tans.as_ref().map(|tv| {
                let t_prev = &tv[l];
                (0..no)
                    .map(|r| w[r * ni..(r + 1) * ni].iter().zip(t_prev).map(|(p, q)| p * q).sum::<f64>())
                    .collect::<Vec<f64>>()
            });
            let last = l + 1 == n_layers;
            if last {
                acts.push(z.clone());
                if let (Some(tv), Some(zt)) = (tans.as_mut(), zt.as_ref()) {
                    tv.push(zt.clone());
                }
            } else {
                let mut a = Vec::with_capacity(no);
                let mut at = Vec::with_capacity(no);
                for (r, &zr) in z.iter().enumerate() {
                    let (v, d, _) = self.activation.eval(zr);
                    a.push(v);
                    if let Some(zt) = zt.as_ref() {
                        at.push(d * zt[r]);
                    }
                }
                acts.push(a);
                if let Some(tv) = tans.as_mut() {
                    tv.push(at);
                }
            }
            pre.push(z);
            if let (Some(pt), Some(zt)) = (pre_tans.as_mut(), zt) {
                pt.push(zt);
            }
        }
        Trace {
            acts,
            tans,
            pre,
            pre_tans,
        }
    }

    /// Accumulates into `grad` the parameter gradient of a loss whose
    /// derivative is `g_out` w.r.t. the output and `g_tan` w.r.t. the output tangent.
    fn backward(&self, tr: &Trace, g_out: &[f64], g_tan: Option<&[f64]>, grad: &mut [f64]) {
        let n_layers = self.widths.len() - 1;
        let mut offs = Vec::with_capacity(n_layers);
        let mut off = 0;
        for l in 0..n_layers {
            offs.push(off);
            off += self.widths[l] * self.widths[l + 1] + self.widths[l + 1];
        }
        let mut a_bar = g_out.to_vec();
        let mut t_bar: Option<Vec<f64>> = g_tan.map(<[f64]>::to_vec);
        for l in (0..n_layers).rev() {
            let (ni, no) = (self.widths[l], self.widths[l + 1]);
            let last = l + 1 == n_layers;
            // Adjoints of the pre-activation and its tangent.
            let (z_bar, zt_bar): (Vec<f64>, Option<Vec<f64>>) = if last {
                (a_bar.clone(), t_bar.clone())
            } else {
                let z = &tr.pre[l];
                let mut zb = vec![0.0; no];
                let mut ztb = t_bar.as_ref().map(|_| vec![0.0; no]);
                for r in 0..no {
                    let (_, d, dd) = self.activation.eval(z[r]);
                    zb[r] = a_bar[r] * d;
                    if let (Some(tb), Some(ztb), Some(pt)) = (t_bar.as_ref(), ztb.as_mut(), tr.pre_tans.as_ref()) {
                        zb[r] += tb[r] * pt[l][r] * dd;
                        ztb[r] = tb[r] * d;
                    }
                }
                (zb, ztb)
            };
            let o = offs[l];
            let a_prev = &tr.acts[l];
            let t_prev = tr.tans.as_ref().map(|tv| &tv[l]);
            {
                let (gw, gb) = grad[o..o + ni * no + no].split_at_mut(ni * no);
                for r in 0..no {
                    gb[r] += z_bar[r];
                    let row = &mut gw[r * ni..(r + 1) * ni];
                    for c in 0..ni {
                        row[c] += z_bar[r] * a_prev[c];
                    }
                    if let (Some(ztb), Some(tp)) = (zt_bar.as_ref(), t_prev) {
                        for c in 0..ni {
                            row[c] += ztb[r] * tp[c];
                        }
                    }
                }
            }
            if l > 0 {
                let w = &self.params[o..o + ni * no];
                let mut na = vec![0.0; ni];
                for r in 0..no {
                    let row = &w[r * ni..(r + 1) * ni];
                    for c in 0..ni {
                        na[c] += row[c] * z_bar[r];
                    }
                }
                t_bar = zt_bar.map(|ztb| {
                    let mut nt = vec![0.0; ni];
                    for r in 0..no {
                        let row = &w[r * ni..(r + 1) * ni];
                        for c in 0..ni {
                            nt[c] += row[c] * ztb[r];
                        }
                    }
                    nt
                });
                a_bar = na;
            }
        }
    }

    /// Forward pass without shape checks.
    pub fn forward(&self, x: &[f64], t: f64) -> Vec<f64> {
        self.trace(x, t, None).acts.pop().expect("output layer")
    }

    /// Output and directional derivative `∂s/∂x · dir`.
    pub fn forward_tangent(&self, x: &[f64], t: f64, dir: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let mut tr = self.trace(x, t, Some(dir));
        let out = tr.acts.pop().expect("output layer");
        let tan = tr.tans.as_mut().and_then(Vec::pop).expect("output tangent");
        (out, tan)
    }

    /// Row-major Jacobian `∂s_r/∂x_c`, one tangent pass per column.
    pub fn jacobian(&self, x: &[f64], t: f64) -> Vec<f64> {
        let d = self.dim;
        let mut jac = vec![0.0; d * d];
        let mut e = vec![0.0; d];
        for c in 0..d {
            e[c] = 1.0;
            let (_, col) = self.forward_tangent(x, t, &e);
            for r in 0..d {
                jac[r * d + c] = col[r];
            }
            e[c] = 0.0;
        }
        jac
    }

    /// Output and parameter gradient of `⟨g, s_θ(x, t)⟩`-type losses where
    /// `loss_grad(out)` returns `∂L/∂out`. The gradient is added to `grad`.
    pub fn accumulate_grad<F>(&self, x: &[f64], t: f64, loss_grad: F, grad: &mut [f64]) -> Vec<f64>
    where
        F: FnOnce(&[f64]) -> Vec<f64>,
    {
        let tr = self.trace(x, t, None);
        let out = tr.acts.last().expect("output layer").clone();
        let g = loss_grad(&out);
        self.backward(&tr, &g, None, grad);
        out
    }

    /// Adds the parameter gradient of `½‖s‖² + tr(∇ₓ s)` at `(x, t)` to
    /// `grad` and returns that per-sample value.
    pub(crate) fn accumulate_ism_grad(&self, x: &[f64], t: f64, weight: f64, grad: &mut [f64]) -> f64 {
        let d = self.dim;
        let mut e = vec![0.0; d];
        let mut value = 0.0;
        let mut g_tan = vec![0.0; d];
        for j in 0..d {
            e[j] = 1.0;
            g_tan[j] = weight;
            let tr = self.trace(x, t, Some(&e));
            let out = tr.acts.last().expect("output layer");
            let tan = &tr.tans.as_ref().expect("tangents")[self.widths.len() - 1];
            value += tan[j];
            let g_out: Vec<f64> = if j == 0 {
                value += 0.5 * out.iter().map(|v| v * v).sum::<f64>();
                out.iter().map(|v| weight * v).collect()
            } else {
                vec![0.0; d]
            };
            self.backward(&tr, &g_out, Some(&g_tan), grad);
            e[j] = 0.0;
            g_tan[j] = 0.0;
        }
        value
    }
}

impl ScoreModel for ScoreNetwork {
    fn dim(&self) -> usize {
        self.dim
    }

    fn score(&self, x: &[f64], level: NoiseLevel) -> Vec<f64> {
        self.forward(x, level.t)
    }

    fn score_jacobian(&self, x: &[f64], level: NoiseLevel) -> Vec<f64> {
        self.jacobian(x, level.t)
    }
}

/// Checked forward pass.
pub fn net_eval(net: &ScoreNetwork, x: &[f64], t: f64) -> Result<Vec<f64>> {
    check_dim("network input", net.dim, x.len())?;
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::invalid("t", format!("must lie in [0, 1], got {t}")));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("x", "must be finite"));
    }
    Ok(net.forward(x, t))
}

/// Largest relative error between the backprop gradient of `½‖s_θ(x, t)‖²`
/// and central differences with step `step`, over all parameters.
///
/// Relative error is `|a − n| / max(|a|, |n|, 1e-6)`; the floor keeps
/// parameters with vanishing gradient from reporting pure rounding noise.
pub fn grad_check(net: &ScoreNetwork, x: &[f64], t: f64, step: f64) -> Result<f64> {
    if !(1e-7..=1e-3).contains(&step) {
        return Err(Error::invalid("step", format!("must lie in [1e-7, 1e-3], got {step}")));
    }
    check_dim("network input", net.dim, x.len())?;
    let mut analytic = vec![0.0; net.n_params()];
    net.accumulate_grad(x, t, <[f64]>::to_vec, &mut analytic);
    let probe = |n: &ScoreNetwork| 0.5 * n.forward(x, t).iter().map(|v| v * v).sum::<f64>();
    let mut work = net.clone();
    let mut worst: f64 = 0.0;
    for k in 0..net.n_params() {
        let p = net.params[k];
        work.params[k] = p + step;
        let up = probe(&work);
        work.params[k] = p - step;
        let down = probe(&work);
        work.params[k] = p;
        let numeric = (up - down) / (2.0 * step);
        let a = analytic[k];
        let denom = a.abs().max(numeric.abs()).max(1e-6);
        worst = worst.max((a - numeric).abs() / denom);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_network_outputs_zero() {
        let net = ScoreNetwork::zeros(2, &[8], Activation::Tanh, TimeEmbedding::Sinusoidal).unwrap();
        assert_eq!(net_eval(&net, &[1.0, -3.0], 0.4).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn linear_layer_definition() {
        // One affine layer, scalar time: out = W (x ⊕ t) + b.
        let w = vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let b = vec![0.5, -0.5];
        let params = [w, b].concat();
        let net = ScoreNetwork::from_params(2, &[], Activation::Identity, TimeEmbedding::Scalar, params).unwrap();
        let out = net_eval(&net, &[1.0, 1.0], 0.5).unwrap();
        assert_eq!(out, vec![1.0 + 2.0 + 1.5 + 0.5, 4.0 + 5.0 + 3.0 - 0.5]);
    }

    #[test]
    fn jacobian_matches_fd() {
        let net = ScoreNetwork::new(3, &[16, 16], Activation::Silu, TimeEmbedding::Sinusoidal, 5).unwrap();
        let x = [0.3, -0.7, 1.1];
        let j = net.jacobian(&x, 0.3);
        let h = 1e-6;
        for c in 0..3 {
            let mut xp = x;
            let mut xm = x;
            xp[c] += h;
            xm[c] -= h;
            let sp = net.forward(&xp, 0.3);
            let sm = net.forward(&xm, 0.3);
            for r in 0..3 {
                let fd = (sp[r] - sm[r]) / (2.0 * h);
                assert!((fd - j[r * 3 + c]).abs() < 1e-7, "{fd} vs {}", j[r * 3 + c]);
            }
        }
    }

    #[test]
    fn ism_grad_matches_fd() {
        for act in [Activation::Tanh, Activation::Silu] {
            let net = ScoreNetwork::new(2, &[6, 5], act, TimeEmbedding::Scalar, 11).unwrap();
            let x = [0.4, -0.9];
            let mut g = vec![0.0; net.n_params()];
            net.accumulate_ism_grad(&x, 0.2, 1.0, &mut g);
            let value = |n: &ScoreNetwork| {
                let s = n.forward(&x, 0.2);
                let j = n.jacobian(&x, 0.2);
                0.5 * (s[0] * s[0] + s[1] * s[1]) + j[0] + j[3]
            };
            let mut work = net.clone();
            for k in 0..net.n_params() {
                let p = work.params[k];
                work.params[k] = p + 1e-6;
                let up = value(&work);
                work.params[k] = p - 1e-6;
                let down = value(&work);
                work.params[k] = p;
                let fd = (up - down) / 2e-6;
                assert!((fd - g[k]).abs() < 1e-6 * (1.0 + fd.abs()), "{act:?} param {k}: {fd} vs {}", g[k]);
            }
        }
    }

    #[test]
    fn grad_check_zero_network() {
        let net = ScoreNetwork::zeros(1, &[4], Activation::Tanh, TimeEmbedding::Scalar).unwrap();
        assert_eq!(grad_check(&net, &[0.5], 0.5, 1e-5).unwrap(), 0.0);
        assert!(grad_check(&net, &[0.5], 0.5, 1e-2).is_err());
    }

    #[test]
    fn rejects_bad_input() {
        let net = ScoreNetwork::default_arch(2, 0).unwrap();
        assert!(net_eval(&net, &[1.0], 0.5).is_err());
        assert!(net_eval(&net, &[1.0, 0.0], 1.5).is_err());
    }
}
