//! Conditioning: classifier guidance, classifier-free interpolation,
//! measurement guidance through the Tweedie denoiser (DPS), its blind variant
//! with a jointly sampled operator parameter, and a semantic regularizer.

use serde::{Deserialize, Serialize};

use crate::channel::ForwardOperator;
use crate::diffusion::{tweedie_from_score, NoiseLevel, NoiseSchedule};
use crate::distributions::GaussianMixture;
use crate::error::{check_dim, Error, Result};
use crate::linalg::{matvec, matvec_t, norm_sq};
use crate::score::ScoreModel;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GuidanceConfig {
    pub gamma: f64,
    #[serde(default)]
    pub lambda: f64,
    /// Divide the measurement gradient by `‖y − A(x̂)‖`.
    #[serde(default)]
    pub normalize_residual: bool,
}

impl GuidanceConfig {
    pub fn new(gamma: f64) -> Self {
        GuidanceConfig {
            gamma,
            lambda: 0.0,
            normalize_residual: false,
        }
    }

    /// `γ = 1/(2σ_n²)`, the weight that turns `−γ‖r‖²` into a Gaussian log-likelihood.
    pub fn gaussian(sigma_n: f64) -> Self {
        Self::new(1.0 / (2.0 * sigma_n * sigma_n))
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(Error::invalid("gamma", "must be finite and nonnegative"));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::invalid("lambda", "must be finite and nonnegative"));
        }
        Ok(())
    }
}

/// Class posteriors of a labeled mixture at a noisy point.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassPosterior {
    /// Distinct labels in increasing order.
    pub classes: Vec<u32>,
    pub probabilities: Vec<f64>,
    /// `∇ₓ log p(y | x_t)` per class.
    pub gradients: Vec<Vec<f64>>,
}

/// Exact time-dependent classifier: Bayes over the perturbed mixture at step `i`.
pub fn gmm_classifier(gmm: &GaussianMixture, x_t: &[f64], i: usize, sched: &NoiseSchedule) -> Result<ClassPosterior> {
    let labels = gmm
        .labels()
        .ok_or_else(|| Error::invalid("gmm", "mixture has no labels"))?
        .to_vec();
    check_dim("point", gmm.dim(), x_t.len())?;
    if i > sched.steps() {
        return Err(Error::invalid("step", format!("{i} beyond schedule length {}", sched.steps())));
    }
    class_posterior_at(gmm, &labels, x_t, sched.level(i))
}

fn class_posterior_at(gmm: &GaussianMixture, labels: &[u32], x: &[f64], level: NoiseLevel) -> Result<ClassPosterior> {
    let (resp, comp_scores) = gmm.component_scores_at(x, level);
    let d = gmm.dim();
    let mut total = vec![0.0; d];
    for (r, s) in resp.iter().zip(&comp_scores) {
        for (t, v) in total.iter_mut().zip(s) {
            *t += r * v;
        }
    }
    let mut classes = labels.to_vec();
    classes.sort_unstable();
    classes.dedup();
    let mut probabilities = Vec::with_capacity(classes.len());
    let mut gradients = Vec::with_capacity(classes.len());
    for &c in &classes {
        let mut p = 0.0;
        let mut g = vec![0.0; d];
        for (&lab, (r, s)) in labels.iter().zip(resp.iter().zip(&comp_scores)) {
            if lab == c {
                p += r;
                for (gi, v) in g.iter_mut().zip(s) {
                    *gi += r * v;
                }
            }
        }
        // ∇ log p(c|x) = Σ_{k∈c} r_k s_k / p(c) − Σ_k r_k s_k
        let grad = if p > 0.0 {
            g.iter().zip(&total).map(|(gi, ti)| gi / p - ti).collect()
        } else {
            vec![f64::NAN; d]
        };
        probabilities.push(p);
        gradients.push(grad);
    }
    Ok(ClassPosterior {
        classes,
        probabilities,
        gradients,
    })
}

/// `s + γ g`.
pub fn cg_score(s_uncond: &[f64], grad_logp_y: &[f64], gamma: f64) -> Vec<f64> {
    s_uncond.iter().zip(grad_logp_y).map(|(s, g)| s + gamma * g).collect()
}

/// `(1 − γ) s_u + γ s_c`, exactly as written; γ > 1 extrapolates.
pub fn cfg_combine(s_uncond: &[f64], s_cond: &[f64], gamma: f64) -> Vec<f64> {
    s_uncond
        .iter()
        .zip(s_cond)
        .map(|(u, c)| (1.0 - gamma) * u + gamma * c)
        .collect()
}

/// Score and Tweedie estimate at one point, with `(∂x̂/∂x)ᵀ` available.
pub(crate) struct Denoised {
    pub score: Vec<f64>,
    pub x0: Vec<f64>,
    jac: Vec<f64>,
    level: NoiseLevel,
}

impl Denoised {
    pub fn new<S: ScoreModel + ?Sized>(score: &S, x: &[f64], level: NoiseLevel) -> Result<Self> {
        if !(level.alpha > 0.0) {
            return Err(Error::Unsupported("guidance through the denoiser needs alpha_t > 0".into()));
        }
        let s = score.score(x, level);
        let x0 = tweedie_from_score(x, level, &s);
        let jac = score.score_jacobian(x, level);
        Ok(Denoised {
            score: s,
            x0,
            jac,
            level,
        })
    }

    /// `(∂x̂/∂x)ᵀ g = (g + σ² J_sᵀ g) / α`.
    pub fn pullback(&self, g: &[f64]) -> Vec<f64> {
        let d = g.len();
        let var = self.level.sigma * self.level.sigma;
        let jt = matvec_t(&self.jac, d, g);
        g.iter()
            .zip(&jt)
            .map(|(gi, ji)| (gi + var * ji) / self.level.alpha)
            .collect()
    }
}

/// `∇_x̂ (−‖y − A(x̂)‖²) = 2 J_A(x̂)ᵀ (y − A(x̂))` and the residual norm.
pub(crate) fn measurement_grad(op: &ForwardOperator, y: &[f64], x0: &[f64]) -> (Vec<f64>, f64) {
    let r: Vec<f64> = y.iter().zip(op.mean(x0)).map(|(a, b)| a - b).collect();
    let g = op.vjp(x0, &r).into_iter().map(|v| 2.0 * v).collect();
    (g, norm_sq(&r).sqrt())
}

pub(crate) fn scaled_grad(g: Vec<f64>, residual_norm: f64, cfg: &GuidanceConfig) -> Vec<f64> {
    let w = if cfg.normalize_residual && residual_norm > 0.0 {
        cfg.gamma / residual_norm
    } else {
        cfg.gamma
    };
    g.into_iter().map(|v| w * v).collect()
}

/// DPS-guided score at an arbitrary noise level.
pub fn dps_score_at<S: ScoreModel + ?Sized>(
    score: &S,
    op: &ForwardOperator,
    y: &[f64],
    x_t: &[f64],
    level: NoiseLevel,
    cfg: &GuidanceConfig,
) -> Result<Vec<f64>> {
    check_dim("measurement", op.out_dim(), y.len())?;
    check_dim("state", op.in_dim(), x_t.len())?;
    check_dim("score model", op.in_dim(), score.dim())?;
    let den = Denoised::new(score, x_t, level)?;
    let (g, rn) = measurement_grad(op, y, &den.x0);
    let g = scaled_grad(den.pullback(&g), rn, cfg);
    Ok(den.score.iter().zip(&g).map(|(s, v)| s + v).collect())
}

/// `s(x_t, i) + γ ∇ₓ(−‖y − A(x̂₀(x_t))‖²)` at schedule step `i`.
pub fn dps_score<S: ScoreModel + ?Sized>(
    score: &S,
    op: &ForwardOperator,
    y: &[f64],
    x_t: &[f64],
    i: usize,
    cfg: &GuidanceConfig,
    sched: &NoiseSchedule,
) -> Result<Vec<f64>> {
    if i == 0 || i > sched.steps() {
        return Err(Error::invalid("step", format!("need 1 <= i <= {}", sched.steps())));
    }
    dps_score_at(score, op, y, x_t, sched.level(i), cfg)
}

/// How the unknown operator parameter `h` enters `A_h(x)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GainFamily {
    /// `A_h(x) = h · c(x)` with scalar `h`.
    Scalar,
    /// `A_h(x) = h ⊙ c(x)` with one gain per channel use.
    Diagonal,
}

/// Operator family `A_h(x) = gain(h) · c(x)` where `c` is the normalized
/// codeword map of `base` (its channel is ignored).
#[derive(Debug, Clone, PartialEq)]
pub struct OperatorFamily {
    pub base: ForwardOperator,
    pub family: GainFamily,
}

impl OperatorFamily {
    pub fn new(base: ForwardOperator, family: GainFamily) -> Self {
        OperatorFamily { base, family }
    }

    pub fn h_dim(&self) -> usize {
        match self.family {
            GainFamily::Scalar => 1,
            GainFamily::Diagonal => self.base.out_dim(),
        }
    }

    pub fn x_dim(&self) -> usize {
        self.base.in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.base.out_dim()
    }

    fn gain(&self, h: &[f64], k: usize) -> f64 {
        match self.family {
            GainFamily::Scalar => h[0],
            GainFamily::Diagonal => h[k],
        }
    }

    pub fn apply_mean(&self, x: &[f64], h: &[f64]) -> Vec<f64> {
        let c = self.base.code(x);
        c.iter().enumerate().map(|(k, v)| self.gain(h, k) * v).collect()
    }

    /// `(J_xᵀ u, J_hᵀ u)` at `(x, h)`.
    pub fn vjp(&self, x: &[f64], h: &[f64], u: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let d = self.x_dim();
        let m = self.out_dim();
        let c = self.base.code(x);
        let scaled: Vec<f64> = (0..m).map(|k| self.gain(h, k) * u[k]).collect();
        // Jacobian of the codeword map; the channel of `base` is not applied.
        let jc = self.code_jacobian(x);
        let gx = matvec_t(&jc, d, &scaled);
        let gh = match self.family {
            GainFamily::Scalar => vec![c.iter().zip(u).map(|(a, b)| a * b).sum()],
            GainFamily::Diagonal => c.iter().zip(u).map(|(a, b)| a * b).collect(),
        };
        (gx, gh)
    }

    fn code_jacobian(&self, x: &[f64]) -> Vec<f64> {
        let d = self.x_dim();
        let m = self.out_dim();
        match self.base.encoder() {
            crate::channel::Encoder::Linear(e) => e.matrix().iter().map(|v| v * self.base.power_scale()).collect(),
            crate::channel::Encoder::Mlp(_) => {
                let step = crate::channel::OPERATOR_FD_STEP;
                let base = self.base.code(x);
                let mut jac = vec![0.0; m * d];
                let mut xp = x.to_vec();
                for col in 0..d {
                    xp[col] = x[col] + step;
                    let up = self.base.code(&xp);
                    xp[col] = x[col];
                    for r in 0..m {
                        jac[r * d + col] = (up[r] - base[r]) / step;
                    }
                }
                jac
            }
        }
    }

    /// Known-gain operator `A_h` for comparisons with non-blind decoding.
    pub fn at(&self, h: &[f64]) -> Result<ForwardOperator> {
        let taps_ok = match self.family {
            GainFamily::Scalar => h.len() == 1,
            GainFamily::Diagonal => false,
        };
        if !taps_ok {
            return Err(Error::Unsupported("only scalar gain families reduce to a channel tap".into()));
        }
        self.base.with_taps(h)
    }
}

/// Residual `y − A(x̂, ĥ)` and guided scores for both branches.
#[derive(Debug, Clone, PartialEq)]
pub struct BlindStep {
    pub score_x: Vec<f64>,
    pub score_h: Vec<f64>,
    pub x0: Vec<f64>,
    pub h0: Vec<f64>,
    pub residual_norm: f64,
}

#[allow(clippy::too_many_arguments)]
pub fn blind_dps_step_at<SX, SH>(
    score_x: &SX,
    score_h: &SH,
    family: &OperatorFamily,
    y: &[f64],
    x_t: &[f64],
    h_t: &[f64],
    level_x: NoiseLevel,
    level_h: NoiseLevel,
    cfg: &GuidanceConfig,
) -> Result<BlindStep>
where
    SX: ScoreModel + ?Sized,
    SH: ScoreModel + ?Sized,
{
    check_dim("measurement", family.out_dim(), y.len())?;
    check_dim("state x", family.x_dim(), x_t.len())?;
    check_dim("state h", family.h_dim(), h_t.len())?;
    check_dim("score model x", family.x_dim(), score_x.dim())?;
    check_dim("score model h", family.h_dim(), score_h.dim())?;
    let dx = Denoised::new(score_x, x_t, level_x)?;
    let dh = Denoised::new(score_h, h_t, level_h)?;
    let r: Vec<f64> = y
        .iter()
        .zip(family.apply_mean(&dx.x0, &dh.x0))
        .map(|(a, b)| a - b)
        .collect();
    let rn = norm_sq(&r).sqrt();
    let (gx, gh) = family.vjp(&dx.x0, &dh.x0, &r);
    let gx = scaled_grad(dx.pullback(&gx.into_iter().map(|v| 2.0 * v).collect::<Vec<_>>()), rn, cfg);
    let gh = scaled_grad(dh.pullback(&gh.into_iter().map(|v| 2.0 * v).collect::<Vec<_>>()), rn, cfg);
    Ok(BlindStep {
        score_x: dx.score.iter().zip(&gx).map(|(s, g)| s + g).collect(),
        score_h: dh.score.iter().zip(&gh).map(|(s, g)| s + g).collect(),
        x0: dx.x0,
        h0: dh.x0,
        residual_norm: rn,
    })
}

/// BlindDPS at step `i` of each schedule: returns the guided `(score_x, score_h)`.
#[allow(clippy::too_many_arguments)]
pub fn blind_dps_step<SX, SH>(
    score_x: &SX,
    score_h: &SH,
    family: &OperatorFamily,
    y: &[f64],
    x_t: &[f64],
    h_t: &[f64],
    i: usize,
    cfg: &GuidanceConfig,
    sched_x: &NoiseSchedule,
    sched_h: &NoiseSchedule,
) -> Result<(Vec<f64>, Vec<f64>)>
where
    SX: ScoreModel + ?Sized,
    SH: ScoreModel + ?Sized,
{
    if i == 0 || i > sched_x.steps() || i > sched_h.steps() {
        return Err(Error::invalid("step", "outside one of the schedules"));
    }
    let out = blind_dps_step_at(score_x, score_h, family, y, x_t, h_t, sched_x.level(i), sched_h.level(i), cfg)?;
    Ok((out.score_x, out.score_h))
}

/// `∇ₓ‖M x − M x_ref‖² = 2 Mᵀ M (x − x_ref)` for a linear feature map `M` (F × D).
pub fn semantic_reg_grad(extractor: &[f64], features: usize, x: &[f64], x_ref: &[f64]) -> Result<Vec<f64>> {
    let d = x.len();
    check_dim("reference", d, x_ref.len())?;
    check_dim("extractor", features * d, extractor.len())?;
    let diff: Vec<f64> = x.iter().zip(x_ref).map(|(a, b)| a - b).collect();
    let f = matvec(extractor, features, &diff);
    Ok(matvec_t(extractor, d, &f).into_iter().map(|v| 2.0 * v).collect())
}
