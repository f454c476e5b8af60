//! Measurement-guided diffusion decoding with a confirming constraint,
//! adaptive sampling start and blind joint `(x, h)` decoding.
//!
//! The guided score at state `x_t` is
//!
//! ```text
//! s(x_t) + γ ∇ₓ(−‖y − A(x̂)‖²) + λ ∇ₓ(−‖x_ref − x̃(x̂)‖²)
//! ```
//!
//! where `x̂` is the Tweedie estimate, `x_ref` the reference decoder applied to
//! `y`, and `x̃ = D(A(x̂))` the reference decoder applied to the noiseless
//! round trip of `x̂`. Reference decoders are affine, `D(y) = R y + c`; the
//! pseudo-inverse kind builds `R` from `E⁺` and the channel inverse `H†`.

use std::io::Write;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::channel::{Encoder, ForwardOperator};
use crate::diffusion::ode::solver_step;
use crate::diffusion::ode::Solver;
use crate::diffusion::{ancestral_step, langevin::langevin_step, NoiseLevel, NoiseSchedule, ScheduleKind};
use crate::distributions::GaussianMixture;
use crate::error::{check_dim, Error, Result};
use crate::guidance::{blind_dps_step_at, measurement_grad, scaled_grad, Denoised, GuidanceConfig, OperatorFamily};
use crate::harness::csv::format_f64;
use crate::linalg::{self, matvec, matvec_t, norm_sq};
use crate::rng::{chain_rng, normal_vec, tagged_rng, ChainRng, OPERATOR_TAG};
use crate::score::ScoreModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum StartMode {
    #[default]
    Full,
    Adaptive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SamplerKind {
    /// Ancestral reverse-SDE recursion over every schedule step.
    #[default]
    ReverseSde,
    /// Probability-flow ODE, Euler.
    Euler,
    /// Probability-flow ODE, classical Runge-Kutta.
    Rk4,
    /// Euler predictor plus one Langevin corrector per step (`ζ = 0.1 σ²`).
    PredictorCorrector,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecoderConfig {
    pub gamma: f64,
    #[serde(default)]
    pub lambda: f64,
    #[serde(default)]
    pub start: StartMode,
    #[serde(default)]
    pub sampler: SamplerKind,
    /// Solver steps of the ODE samplers over the full time range; the
    /// ancestral sampler always walks the schedule's own steps.
    #[serde(default = "default_steps")]
    pub steps: usize,
    #[serde(default)]
    pub normalize_residual: bool,
    /// Scale γ and λ by `1 − t`, ramping guidance up toward the data end.
    #[serde(default)]
    pub anneal: bool,
}

fn default_steps() -> usize {
    1000
}

impl DecoderConfig {
    pub fn new(gamma: f64, lambda: f64) -> Self {
        DecoderConfig {
            gamma,
            lambda,
            start: StartMode::Full,
            sampler: SamplerKind::ReverseSde,
            steps: default_steps(),
            normalize_residual: false,
            anneal: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.guidance().validate()?;
        if self.steps == 0 {
            return Err(Error::invalid("steps", "must be at least 1"));
        }
        Ok(())
    }

    pub fn guidance(&self) -> GuidanceConfig {
        GuidanceConfig {
            gamma: self.gamma,
            lambda: self.lambda,
            normalize_residual: self.normalize_residual,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReferenceKind {
    PseudoInverse,
    ConjugateMean,
    TrainedLinear,
}

/// Affine reference decoder `y ↦ R y + c`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceDecoder {
    kind: ReferenceKind,
    d: usize,
    m: usize,
    /// Row-major D×m.
    r: Vec<f64>,
    c: Vec<f64>,
}

fn linear_parts(op: &ForwardOperator, what: &str) -> Result<(Vec<f64>, Vec<f64>)> {
    match (op.matrix(), op.offset()) {
        (Some(k), Some(k0)) => Ok((k, k0)),
        _ => Err(Error::Unsupported(format!("{what} needs a linear encoder"))),
    }
}

/// Number of simulated pairs used to fit the trained-linear decoder.
pub const TRAINED_LINEAR_PAIRS: usize = 20_000;

impl ReferenceDecoder {
    /// `x = (sM)⁺ (H† y − s b)`.
    pub fn pseudo_inverse(op: &ForwardOperator) -> Result<Self> {
        let Encoder::Linear(e) = op.encoder() else {
            return Err(Error::Unsupported("pseudo-inverse decoding needs a linear encoder".into()));
        };
        let (d, m) = (op.in_dim(), op.out_dim());
        let s = op.power_scale();
        let sm = DMatrix::from_row_slice(m, d, e.matrix()) * s;
        let e_pinv = linalg::pinv(&sm);
        let h_pinv = DMatrix::from_row_slice(m, m, &op.channel_pinv());
        let r = &e_pinv * h_pinv;
        let c = match e.bias() {
            Some(b) => {
                let sb = nalgebra::DVector::from_iterator(m, b.iter().map(|v| v * s));
                (&e_pinv * sb).iter().map(|v| -v).collect()
            }
            None => vec![0.0; d],
        };
        Ok(ReferenceDecoder {
            kind: ReferenceKind::PseudoInverse,
            d,
            m,
            r: linalg::from_dmatrix(&r),
            c,
        })
    }

    /// Posterior mean under the Gaussian with the prior's mean and covariance.
    pub fn conjugate_mean(op: &ForwardOperator, prior: &GaussianMixture) -> Result<Self> {
        check_dim("prior", op.in_dim(), prior.dim())?;
        let (k, k0) = linear_parts(op, "conjugate-mean decoding")?;
        let (d, m) = (op.in_dim(), op.out_dim());
        let mu = prior.mean();
        let sigma = DMatrix::from_row_slice(d, d, &prior.covariance());
        let km = DMatrix::from_row_slice(m, d, &k);
        let noise = op.sigma_n() * op.sigma_n();
        let gram = &km * &sigma * km.transpose() + DMatrix::identity(m, m) * noise;
        let r = &sigma * km.transpose() * linalg::pinv(&gram);
        let r = linalg::from_dmatrix(&r);
        let pred: Vec<f64> = matvec(&k, m, &mu).iter().zip(&k0).map(|(a, b)| a + b).collect();
        let rp = matvec(&r, d, &pred);
        let c = mu.iter().zip(&rp).map(|(a, b)| a - b).collect();
        Ok(ReferenceDecoder {
            kind: ReferenceKind::ConjugateMean,
            d,
            m,
            r,
            c,
        })
    }

    /// Least-squares affine fit on `n` simulated `(x, y)` pairs.
    pub fn trained_linear(op: &ForwardOperator, prior: &GaussianMixture, n: usize, seed: u64) -> Result<Self> {
        check_dim("prior", op.in_dim(), prior.dim())?;
        let (d, m) = (op.in_dim(), op.out_dim());
        if n <= m + 1 {
            return Err(Error::invalid("n", "need more pairs than unknowns"));
        }
        let xs = prior.sample_points(n, seed);
        let mut noise_rng = chain_rng(seed, 1);
        let mut phi = DMatrix::zeros(n, m + 1);
        let mut targets = DMatrix::zeros(n, d);
        for (row, x) in xs.iter().enumerate() {
            let y = op.mean(x);
            let z = normal_vec(&mut noise_rng, m);
            for j in 0..m {
                phi[(row, j)] = y[j] + op.sigma_n() * z[j];
            }
            phi[(row, m)] = 1.0;
            for j in 0..d {
                targets[(row, j)] = x[j];
            }
        }
        let w = linalg::pinv(&phi) * targets; // (m+1) × d
        let mut r = vec![0.0; d * m];
        for i in 0..d {
            for j in 0..m {
                r[i * m + j] = w[(j, i)];
            }
        }
        let c = (0..d).map(|i| w[(m, i)]).collect();
        Ok(ReferenceDecoder {
            kind: ReferenceKind::TrainedLinear,
            d,
            m,
            r,
            c,
        })
    }

    pub fn build(kind: ReferenceKind, op: &ForwardOperator, prior: &GaussianMixture, seed: u64) -> Result<Self> {
        match kind {
            ReferenceKind::PseudoInverse => Self::pseudo_inverse(op),
            ReferenceKind::ConjugateMean => Self::conjugate_mean(op, prior),
            ReferenceKind::TrainedLinear => Self::trained_linear(op, prior, TRAINED_LINEAR_PAIRS, seed),
        }
    }

    pub fn kind(&self) -> ReferenceKind {
        self.kind
    }

    /// Row-major D×m matrix `R`.
    pub fn matrix(&self) -> &[f64] {
        &self.r
    }

    pub fn offset(&self) -> &[f64] {
        &self.c
    }

    pub fn decode(&self, y: &[f64]) -> Vec<f64> {
        matvec(&self.r, self.d, y).iter().zip(&self.c).map(|(a, b)| a + b).collect()
    }

    /// Expected squared reconstruction error over the prior, divided by the
    /// total prior variance `tr Σ`. Closed form for linear operators, a
    /// 4096-draw seeded estimate otherwise.
    pub fn normalized_error(&self, op: &ForwardOperator, prior: &GaussianMixture, seed: u64) -> Result<f64> {
        check_dim("prior", self.d, prior.dim())?;
        check_dim("operator output", self.m, op.out_dim())?;
        let (d, m) = (self.d, self.m);
        let cov = prior.covariance();
        let total_var: f64 = (0..d).map(|i| cov[i * d + i]).sum();
        if !(total_var > 0.0) {
            return Err(Error::invalid("prior", "zero variance"));
        }
        let mse = match linear_parts(op, "") {
            Ok((k, k0)) => {
                // e = B x + R k₀ + c + R n with B = R K − I.
                let rm = DMatrix::from_row_slice(d, m, &self.r);
                let km = DMatrix::from_row_slice(m, d, &k);
                let b = &rm * km - DMatrix::identity(d, d);
                let sigma = DMatrix::from_row_slice(d, d, &cov);
                let spread = (&b * sigma * b.transpose()).trace();
                let mu = prior.mean();
                let bias: Vec<f64> = (&b * nalgebra::DVector::from_column_slice(&mu))
                    .iter()
                    .zip(matvec(&self.r, d, &k0))
                    .zip(&self.c)
                    .map(|((a, b), c)| a + b + c)
                    .collect();
                let noise = op.sigma_n() * op.sigma_n() * norm_sq(&self.r);
                spread + norm_sq(&bias) + noise
            }
            Err(_) => {
                let n = 4096;
                let xs = prior.sample_points(n, seed);
                let mut rng = chain_rng(seed, 1);
                xs.iter()
                    .map(|x| {
                        let mut y = op.mean(x);
                        for (yi, z) in y.iter_mut().zip(normal_vec(&mut rng, m)) {
                            *yi += op.sigma_n() * z;
                        }
                        let xh = self.decode(&y);
                        x.iter().zip(&xh).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()
                    })
                    .sum::<f64>()
                    / n as f64
            }
        };
        Ok(mse / total_var)
    }
}

pub fn reference_decode(y: &[f64], op: &ForwardOperator, dec: &ReferenceDecoder) -> Result<Vec<f64>> {
    check_dim("measurement", op.out_dim(), y.len())?;
    check_dim("decoder input", dec.m, y.len())?;
    check_dim("decoder output", op.in_dim(), dec.d)?;
    Ok(dec.decode(y))
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdaptiveStart {
    pub step: usize,
    pub init: Vec<f64>,
    pub v_hat: f64,
    pub x_ref: Vec<f64>,
}

/// Smallest `i ≥ 1` with `1 − ᾱ_i ≥ v̂`, or `N` if none.
pub fn start_step_for(sched: &NoiseSchedule, v_hat: f64) -> usize {
    (1..=sched.steps())
        .find(|&i| 1.0 - sched.alpha_bar(i) >= v_hat)
        .unwrap_or(sched.steps())
}

fn adaptive_with(
    y: &[f64],
    op: &ForwardOperator,
    sched: &NoiseSchedule,
    dec: &ReferenceDecoder,
    prior: &GaussianMixture,
    seed: u64,
    rng: &mut ChainRng,
) -> Result<AdaptiveStart> {
    if sched.kind() != ScheduleKind::Vp {
        return Err(Error::Unsupported("adaptive start needs a VP schedule".into()));
    }
    let x_ref = reference_decode(y, op, dec)?;
    let v_hat = dec.normalized_error(op, prior, seed)?;
    let step = start_step_for(sched, v_hat);
    let ab = sched.alpha_bar(step);
    let eps = normal_vec(rng, x_ref.len());
    let init = x_ref
        .iter()
        .zip(&eps)
        .map(|(x, e)| ab.sqrt() * x + (1.0 - ab).sqrt() * e)
        .collect();
    Ok(AdaptiveStart {
        step,
        init,
        v_hat,
        x_ref,
    })
}

/// Channel-quality-matched start: `(i*, √ᾱ x_ref + √(1−ᾱ) ε)` with `ε`
/// from stream `(seed, 0)`.
pub fn adaptive_start(
    y: &[f64],
    op: &ForwardOperator,
    sched: &NoiseSchedule,
    dec: &ReferenceDecoder,
    prior: &GaussianMixture,
    seed: u64,
) -> Result<AdaptiveStart> {
    adaptive_with(y, op, sched, dec, prior, seed, &mut chain_rng(seed, 0))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiagnosticRow {
    pub step: usize,
    pub residual_norm: f64,
    pub confirming_norm: f64,
    pub state_norm: f64,
}

pub fn write_diagnostics_csv<W: Write>(mut out: W, rows: &[DiagnosticRow]) -> Result<()> {
    writeln!(out, "step,residual_norm,confirming_norm,state_norm")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{}",
            r.step,
            format_f64(r.residual_norm),
            format_f64(r.confirming_norm),
            format_f64(r.state_norm)
        )?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecodeOutput {
    pub x: Vec<f64>,
    /// Schedule step the sampler started from.
    pub start_step: usize,
    /// Score evaluations' step count actually walked.
    pub steps_used: usize,
    pub diagnostics: Vec<DiagnosticRow>,
}

struct Guided<'a, S: ?Sized> {
    score: &'a S,
    op: &'a ForwardOperator,
    y: &'a [f64],
    dec: &'a ReferenceDecoder,
    x_ref: Vec<f64>,
    cfg: DecoderConfig,
}

impl<S: ScoreModel + ?Sized> Guided<'_, S> {
    fn eval(&self, x: &[f64], level: NoiseLevel) -> Result<(Vec<f64>, f64, f64)> {
        let den = Denoised::new(self.score, x, level)?;
        let factor = if self.cfg.anneal { 1.0 - level.t } else { 1.0 };
        let gcfg = GuidanceConfig {
            gamma: self.cfg.gamma * factor,
            ..self.cfg.guidance()
        };
        let (g, rn) = measurement_grad(self.op, self.y, &den.x0);
        let mut total = scaled_grad(g, rn, &gcfg);
        let lambda = self.cfg.lambda * factor;
        let ax = self.op.mean(&den.x0);
        let xt = self.dec.decode(&ax);
        let cr: Vec<f64> = self.x_ref.iter().zip(&xt).map(|(a, b)| a - b).collect();
        let cn = norm_sq(&cr).sqrt();
        if lambda > 0.0 {
            // ∇_x̂(−‖x_ref − R A(x̂) − c‖²) = 2 J_Aᵀ Rᵀ (x_ref − x̃)
            let u = matvec_t(&self.dec.r, self.dec.m, &cr);
            let g = self.op.vjp(&den.x0, &u);
            for (t, v) in total.iter_mut().zip(g) {
                *t += 2.0 * lambda * v;
            }
        }
        let pulled = den.pullback(&total);
        let s = den.score.iter().zip(&pulled).map(|(a, b)| a + b).collect();
        Ok((s, rn, cn))
    }
}

fn ensure_finite(x: &[f64], step: usize) -> Result<()> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite { step })
    }
}

/// Decodes one measurement. Randomness comes from stream `(seed, 0)`: the
/// initial state first, then one draw per stochastic step.
#[allow(clippy::too_many_arguments)]
pub fn diffcom_decode<S: ScoreModel + ?Sized>(
    y: &[f64],
    op: &ForwardOperator,
    prior_score: &S,
    prior: &GaussianMixture,
    sched: &NoiseSchedule,
    cfg: &DecoderConfig,
    dec: &ReferenceDecoder,
    seed: u64,
) -> Result<DecodeOutput> {
    cfg.validate()?;
    check_dim("measurement", op.out_dim(), y.len())?;
    check_dim("score model", op.in_dim(), prior_score.dim())?;
    let d = op.in_dim();
    let mut rng = chain_rng(seed, 0);
    let (start, mut x, x_ref) = match cfg.start {
        StartMode::Full => {
            let sd = sched.terminal_variance().sqrt();
            let x0 = normal_vec(&mut rng, d).into_iter().map(|z| sd * z).collect();
            (sched.steps(), x0, reference_decode(y, op, dec)?)
        }
        StartMode::Adaptive => {
            let a = adaptive_with(y, op, sched, dec, prior, seed, &mut rng)?;
            (a.step, a.init, a.x_ref)
        }
    };
    let guided = Guided {
        score: prior_score,
        op,
        y,
        dec,
        x_ref,
        cfg: *cfg,
    };
    let mut diagnostics = Vec::new();
    let steps_used;
    match cfg.sampler {
        SamplerKind::ReverseSde => {
            for i in (1..=start).rev() {
                let (s, rn, cn) = guided.eval(&x, sched.level(i))?;
                let z = normal_vec(&mut rng, d);
                x = ancestral_step(sched, i, &x, &s, &z);
                ensure_finite(&x, i)?;
                diagnostics.push(DiagnosticRow {
                    step: i,
                    residual_norm: rn,
                    confirming_norm: cn,
                    state_norm: norm_sq(&x).sqrt(),
                });
            }
            steps_used = start;
        }
        kind => {
            let t0 = if start == sched.steps() { 1.0 } else { sched.time(start) };
            let n = ((cfg.steps as f64 * t0).ceil() as usize).max(1);
            let h = -t0 / n as f64;
            let field = |x: &[f64], t: f64| -> Vec<f64> {
                let (a, b) = sched.flow_coefficients(t);
                match guided.eval(x, sched.level_at(t)) {
                    Ok((s, _, _)) => x.iter().zip(&s).map(|(xi, si)| a * xi + b * si).collect(),
                    Err(_) => vec![f64::NAN; x.len()],
                }
            };
            for k in 0..n {
                let t = t0 + k as f64 * h;
                let (_, rn, cn) = guided.eval(&x, sched.level_at(t))?;
                x = match kind {
                    SamplerKind::Euler | SamplerKind::PredictorCorrector => solver_step(Solver::Euler, &field, &x, t, h),
                    _ => solver_step(Solver::Rk4, &field, &x, t, h),
                };
                if kind == SamplerKind::PredictorCorrector {
                    let level = sched.level_at((t + h).max(0.0));
                    let zeta = 0.1 * level.variance();
                    if zeta > 0.0 {
                        let (s, _, _) = guided.eval(&x, level)?;
                        x = langevin_step(&x, &s, zeta, &normal_vec(&mut rng, d));
                    }
                }
                ensure_finite(&x, n - k)?;
                diagnostics.push(DiagnosticRow {
                    step: n - k,
                    residual_norm: rn,
                    confirming_norm: cn,
                    state_norm: norm_sq(&x).sqrt(),
                });
            }
            steps_used = n;
        }
    }
    Ok(DecodeOutput {
        x,
        start_step: start,
        steps_used,
        diagnostics,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlindOutput {
    pub x: Vec<f64>,
    pub h: Vec<f64>,
    pub diagnostics: Vec<DiagnosticRow>,
}

/// Coupled ancestral samplers for `x` (stream `(seed, 0)`) and `h` (stream
/// `(seed ⊕ OPERATOR_TAG, 0)`), both guided through the shared residual.
#[allow(clippy::too_many_arguments)]
pub fn blind_diffcom_decode<SX, SH>(
    y: &[f64],
    family: &OperatorFamily,
    score_x: &SX,
    score_h: &SH,
    sched_x: &NoiseSchedule,
    sched_h: &NoiseSchedule,
    cfg: &DecoderConfig,
    seed: u64,
) -> Result<BlindOutput>
where
    SX: ScoreModel + ?Sized,
    SH: ScoreModel + ?Sized,
{
    cfg.validate()?;
    if sched_x.steps() != sched_h.steps() {
        return Err(Error::invalid("schedules", "x and h schedules need equal step counts"));
    }
    if cfg.sampler != SamplerKind::ReverseSde {
        return Err(Error::Unsupported("blind decoding runs the ancestral sampler".into()));
    }
    let (dx, dh) = (family.x_dim(), family.h_dim());
    let mut rx = chain_rng(seed, 0);
    let mut rh = tagged_rng(seed, OPERATOR_TAG, 0);
    let sx = sched_x.terminal_variance().sqrt();
    let sh = sched_h.terminal_variance().sqrt();
    let mut x: Vec<f64> = normal_vec(&mut rx, dx).into_iter().map(|z| sx * z).collect();
    let mut h: Vec<f64> = normal_vec(&mut rh, dh).into_iter().map(|z| sh * z).collect();
    let mut diagnostics = Vec::with_capacity(sched_x.steps());
    for i in (1..=sched_x.steps()).rev() {
        let lx = sched_x.level(i);
        let factor = if cfg.anneal { 1.0 - lx.t } else { 1.0 };
        let g = GuidanceConfig {
            gamma: cfg.gamma * factor,
            ..cfg.guidance()
        };
        let st = blind_dps_step_at(score_x, score_h, family, y, &x, &h, lx, sched_h.level(i), &g)?;
        x = ancestral_step(sched_x, i, &x, &st.score_x, &normal_vec(&mut rx, dx));
        h = ancestral_step(sched_h, i, &h, &st.score_h, &normal_vec(&mut rh, dh));
        ensure_finite(&x, i)?;
        ensure_finite(&h, i)?;
        diagnostics.push(DiagnosticRow {
            step: i,
            residual_norm: st.residual_norm,
            confirming_norm: 0.0,
            state_norm: norm_sq(&x).sqrt(),
        });
    }
    Ok(BlindOutput { x, h, diagnostics })
}
