//! Channels and the composed forward operator `y = H(s · E(x)) + n`.
//!
//! `s` is a fixed power-normalization scale (see
//! [`ForwardOperator::calibrate_power`]); keeping it fixed rather than
//! normalizing each codeword keeps linear encoders linear, which the
//! posterior-sampling oracles rely on. SNR is defined on the normalized
//! symbols: `σ_n² = 10^(−snr_db/10)`.

mod encoder;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

pub use encoder::{Encoder, EncoderSpec, LinearEncoder, MlpEncoder};

use crate::distributions::GaussianMixture;
use crate::error::{check_dim, Error, Result};
use crate::linalg;
use crate::rng::{normal_vec, tagged_rng, CHANNEL_TAG, NOISE_TAG};

/// Regularizer in the scalar channel inverse `h / (h² + δ)`.
pub const SCALAR_INVERSE_DELTA: f64 = 1e-8;

/// Step of the forward differences used for nonlinear encoder Jacobians.
pub const OPERATOR_FD_STEP: f64 = 1e-6;

/// Real multipath taps. Rayleigh draws are calibrated so `E Σ|h_l|² = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelState {
    taps: Vec<f64>,
    sigma_h: f64,
}

impl ChannelState {
    pub fn new(taps: Vec<f64>, sigma_h: f64) -> Result<Self> {
        if taps.is_empty() {
            return Err(Error::invalid("taps", "need at least one tap"));
        }
        if taps.iter().any(|t| !t.is_finite()) || !(sigma_h >= 0.0 && sigma_h.is_finite()) {
            return Err(Error::invalid("taps", "entries must be finite"));
        }
        Ok(ChannelState { taps, sigma_h })
    }

    /// Single unit tap.
    pub fn unit() -> Self {
        ChannelState {
            taps: vec![1.0],
            sigma_h: 1.0,
        }
    }

    /// `L` Rayleigh taps: each the magnitude of a `CN(0, σ_h²)` draw with
    /// `σ_h² = 1/L`.
    pub fn rayleigh(paths: usize, seed: u64) -> Result<Self> {
        if paths == 0 {
            return Err(Error::invalid("paths", "need at least one path"));
        }
        let var = 1.0 / paths as f64;
        let mut rng = tagged_rng(seed, CHANNEL_TAG, 0);
        let taps = (0..paths)
            .map(|_| {
                let g = normal_vec(&mut rng, 2);
                (0.5 * var * (g[0] * g[0] + g[1] * g[1])).sqrt()
            })
            .collect();
        Ok(ChannelState {
            taps,
            sigma_h: var.sqrt(),
        })
    }

    pub fn taps(&self) -> &[f64] {
        &self.taps
    }

    pub fn sigma_h(&self) -> f64 {
        self.sigma_h
    }

    pub fn paths(&self) -> usize {
        self.taps.len()
    }

    /// `h ⊛ z`: scalar gain for one tap, circular convolution otherwise.
    pub fn convolve(&self, z: &[f64]) -> Vec<f64> {
        let m = z.len();
        if self.taps.len() == 1 {
            return z.iter().map(|v| self.taps[0] * v).collect();
        }
        (0..m)
            .map(|k| {
                self.taps
                    .iter()
                    .enumerate()
                    .map(|(l, h)| h * z[(k + m - l % m) % m])
                    .sum()
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Channel {
    Awgn,
    Fading(ChannelState),
}

/// Serializable channel description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ChannelSpec {
    Awgn,
    Fading {
        /// Explicit taps; when absent, `paths` Rayleigh taps are drawn.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        taps: Option<Vec<f64>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        paths: Option<usize>,
        #[serde(default)]
        seed: u64,
    },
}

impl ChannelSpec {
    pub fn build(&self) -> Result<Channel> {
        Ok(match self {
            ChannelSpec::Awgn => Channel::Awgn,
            ChannelSpec::Fading { taps: Some(t), .. } => Channel::Fading(ChannelState::new(t.clone(), 1.0)?),
            ChannelSpec::Fading { taps: None, paths, seed } => {
                Channel::Fading(ChannelState::rayleigh(paths.unwrap_or(1), *seed)?)
            }
        })
    }
}

/// `σ_n² = 10^(−snr_db/10)`; `+∞` maps to 0.
pub fn noise_variance(snr_db: f64) -> f64 {
    if snr_db == f64::INFINITY {
        0.0
    } else {
        10f64.powf(-snr_db / 10.0)
    }
}

pub fn noise_sigma(snr_db: f64) -> f64 {
    noise_variance(snr_db).sqrt()
}

/// Scales `z` to unit mean squared amplitude.
pub fn power_normalize(z: &[f64]) -> Result<Vec<f64>> {
    let p = linalg::norm_sq(z) / z.len().max(1) as f64;
    if !(p > 0.0) {
        return Err(Error::invalid("z", "cannot normalize an all-zero signal"));
    }
    let s = 1.0 / p.sqrt();
    Ok(z.iter().map(|v| v * s).collect())
}

/// Normalizes a batch by its pooled power.
pub fn power_normalize_batch(zs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let n: usize = zs.iter().map(Vec::len).sum();
    let p = zs.iter().map(|z| linalg::norm_sq(z)).sum::<f64>() / n.max(1) as f64;
    if !(p > 0.0) {
        return Err(Error::invalid("z", "cannot normalize an all-zero batch"));
    }
    let s = 1.0 / p.sqrt();
    Ok(zs.iter().map(|z| z.iter().map(|v| v * s).collect()).collect())
}

fn add_noise(mut z: Vec<f64>, sigma: f64, seed: u64) -> Vec<f64> {
    if sigma > 0.0 {
        let n = normal_vec(&mut tagged_rng(seed, NOISE_TAG, 0), z.len());
        for (zi, ni) in z.iter_mut().zip(n) {
            *zi += sigma * ni;
        }
    }
    z
}

/// Additive white Gaussian noise at `snr_db` (power-normalized input assumed).
pub fn awgn(z: &[f64], snr_db: f64, seed: u64) -> Vec<f64> {
    add_noise(z.to_vec(), noise_sigma(snr_db), seed)
}

/// Multipath fading followed by AWGN on the same noise stream as [`awgn`].
pub fn fading(z: &[f64], state: &ChannelState, snr_db: f64, seed: u64) -> Vec<f64> {
    add_noise(state.convolve(z), noise_sigma(snr_db), seed)
}

/// `A = H ∘ (s · E)` plus noise scale `σ_n`.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOperator {
    encoder: Encoder,
    channel: Channel,
    sigma_n: f64,
    power_scale: f64,
}

pub fn compose(encoder: Encoder, channel: Channel, sigma_n: f64) -> Result<ForwardOperator> {
    if !(sigma_n >= 0.0 && sigma_n.is_finite()) {
        return Err(Error::invalid("sigma_n", "must be finite and nonnegative"));
    }
    if let Channel::Fading(state) = &channel {
        if state.paths() > encoder.out_dim() {
            return Err(Error::invalid(
                "paths",
                format!("{} taps exceed the {} channel uses", state.paths(), encoder.out_dim()),
            ));
        }
    }
    Ok(ForwardOperator {
        encoder,
        channel,
        sigma_n,
        power_scale: 1.0,
    })
}

impl ForwardOperator {
    /// Identity encoder, noiseless AWGN channel.
    pub fn identity(dim: usize) -> Self {
        compose(LinearEncoder::identity(dim).into(), Channel::Awgn, 0.0).expect("identity operator is valid")
    }

    pub fn in_dim(&self) -> usize {
        self.encoder.in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.encoder.out_dim()
    }

    /// Channel bandwidth ratio m / D.
    pub fn cbr(&self) -> f64 {
        self.out_dim() as f64 / self.in_dim() as f64
    }

    pub fn sigma_n(&self) -> f64 {
        self.sigma_n
    }

    pub fn encoder(&self) -> &Encoder {
        &self.encoder
    }

    pub fn channel(&self) -> &Channel {
        &self.channel
    }

    pub fn power_scale(&self) -> f64 {
        self.power_scale
    }

    pub fn is_linear(&self) -> bool {
        self.encoder.is_linear()
    }

    pub fn with_power_scale(mut self, scale: f64) -> Result<Self> {
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::invalid("power_scale", "must be positive"));
        }
        self.power_scale = scale;
        Ok(self)
    }

    pub fn with_sigma_n(mut self, sigma_n: f64) -> Result<Self> {
        if !(sigma_n >= 0.0 && sigma_n.is_finite()) {
            return Err(Error::invalid("sigma_n", "must be finite and nonnegative"));
        }
        self.sigma_n = sigma_n;
        Ok(self)
    }

    /// Same operator with channel taps replaced by `taps`.
    pub fn with_taps(&self, taps: &[f64]) -> Result<Self> {
        let sigma_h = match &self.channel {
            Channel::Fading(s) => s.sigma_h,
            Channel::Awgn => 1.0,
        };
        compose(
            self.encoder.clone(),
            Channel::Fading(ChannelState::new(taps.to_vec(), sigma_h)?),
            self.sigma_n,
        )?
        .with_power_scale(self.power_scale)
    }

    /// Sets the scale so that codewords of `prior` have unit average power:
    /// exact moments for linear encoders, a 4096-draw estimate otherwise.
    pub fn calibrate_power(self, prior: &GaussianMixture, seed: u64) -> Result<Self> {
        check_dim("prior", self.in_dim(), prior.dim())?;
        let m = self.out_dim();
        let power = match &self.encoder {
            Encoder::Linear(e) => {
                let d = e.cols();
                let mean = e.apply(&prior.mean());
                let cov = prior.covariance();
                let mut tr = 0.0;
                for r in 0..m {
                    let row = &e.matrix()[r * d..(r + 1) * d];
                    let cr = linalg::matvec(&cov, d, row);
                    tr += linalg::dot(row, &cr);
                }
                (tr + linalg::norm_sq(&mean)) / m as f64
            }
            Encoder::Mlp(_) => {
                let pts = prior.sample_points(4096, seed);
                pts.iter().map(|x| linalg::norm_sq(&self.encoder.apply(x))).sum::<f64>() / (4096 * m) as f64
            }
        };
        if !(power > 0.0) {
            return Err(Error::invalid("prior", "codewords have zero power"));
        }
        self.with_power_scale(1.0 / power.sqrt())
    }

    /// Transmitted symbols `s · E(x)`.
    pub fn code(&self, x: &[f64]) -> Vec<f64> {
        self.encoder.apply(x).into_iter().map(|v| v * self.power_scale).collect()
    }

    fn channel_apply(&self, z: &[f64]) -> Vec<f64> {
        match &self.channel {
            Channel::Awgn => z.to_vec(),
            Channel::Fading(s) => s.convolve(z),
        }
    }

    /// Noiseless `H(s · E(x))`, unchecked.
    pub fn mean(&self, x: &[f64]) -> Vec<f64> {
        self.channel_apply(&self.code(x))
    }

    pub fn mean_apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim("operator input", self.in_dim(), x.len())?;
        Ok(self.mean(x))
    }

    /// One noisy measurement; noise from the `(seed ⊕ NOISE_TAG, 0)` stream.
    pub fn apply(&self, x: &[f64], seed: u64) -> Result<Vec<f64>> {
        Ok(add_noise(self.mean_apply(x)?, self.sigma_n, seed))
    }

    /// Row-major m×m channel matrix.
    pub fn channel_matrix(&self) -> Vec<f64> {
        let m = self.out_dim();
        let mut h = vec![0.0; m * m];
        match &self.channel {
            Channel::Awgn => (0..m).for_each(|i| h[i * m + i] = 1.0),
            Channel::Fading(s) => {
                for k in 0..m {
                    for (l, tap) in s.taps.iter().enumerate() {
                        h[k * m + (k + m - l % m) % m] += tap;
                    }
                }
            }
        }
        h
    }

    /// `H†`: identity for AWGN, `h/(h² + 1e-8)` for one tap, Moore-Penrose otherwise.
    pub fn channel_pinv(&self) -> Vec<f64> {
        let m = self.out_dim();
        match &self.channel {
            Channel::Fading(s) if s.paths() == 1 => {
                let h = s.taps[0];
                let g = h / (h * h + SCALAR_INVERSE_DELTA);
                let mut out = vec![0.0; m * m];
                (0..m).for_each(|i| out[i * m + i] = g);
                out
            }
            Channel::Fading(_) => {
                linalg::from_dmatrix(&linalg::pinv(&linalg::to_dmatrix(&self.channel_matrix(), m, m)))
            }
            Channel::Awgn => {
                let mut out = vec![0.0; m * m];
                (0..m).for_each(|i| out[i * m + i] = 1.0);
                out
            }
        }
    }

    /// Matrix `K` of a linear operator `A x = K x + k₀`.
    pub fn matrix(&self) -> Option<Vec<f64>> {
        let Encoder::Linear(e) = &self.encoder else {
            return None;
        };
        let (m, d) = (e.rows(), e.cols());
        let h = self.channel_matrix();
        let mut k = vec![0.0; m * d];
        for r in 0..m {
            for j in 0..m {
                let hrj = h[r * m + j];
                if hrj == 0.0 {
                    continue;
                }
                for c in 0..d {
                    k[r * d + c] += hrj * self.power_scale * e.matrix()[j * d + c];
                }
            }
        }
        Some(k)
    }

    /// Offset `k₀ = H(s b)` of a linear operator.
    pub fn offset(&self) -> Option<Vec<f64>> {
        let Encoder::Linear(e) = &self.encoder else {
            return None;
        };
        let b: Vec<f64> = match e.bias() {
            Some(b) => b.iter().map(|v| v * self.power_scale).collect(),
            None => vec![0.0; e.rows()],
        };
        Some(self.channel_apply(&b))
    }

    /// Row-major m×D Jacobian at `x`: exact for linear encoders, forward
    /// differences with step [`OPERATOR_FD_STEP`] otherwise.
    pub fn jacobian(&self, x: &[f64]) -> Vec<f64> {
        if let Some(k) = self.matrix() {
            return k;
        }
        let (m, d) = (self.out_dim(), self.in_dim());
        let base = self.mean(x);
        let mut jac = vec![0.0; m * d];
        let mut xp = x.to_vec();
        for c in 0..d {
            xp[c] = x[c] + OPERATOR_FD_STEP;
            let up = self.mean(&xp);
            xp[c] = x[c];
            for r in 0..m {
                jac[r * d + c] = (up[r] - base[r]) / OPERATOR_FD_STEP;
            }
        }
        jac
    }

    /// `J(x)ᵀ u`.
    pub fn vjp(&self, x: &[f64], u: &[f64]) -> Vec<f64> {
        linalg::matvec_t(&self.jacobian(x), self.in_dim(), u)
    }
}

/// κ(A) = σ_max/σ_min over nonzero singular values of a row-major matrix.
pub fn condition_number(matrix: &[f64], rows: usize, cols: usize) -> Result<f64> {
    check_dim("matrix", rows * cols, matrix.len())?;
    linalg::condition_number(&DMatrix::from_row_slice(rows, cols, matrix))
}
