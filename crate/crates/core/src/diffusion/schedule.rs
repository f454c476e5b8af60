//! Discrete noise schedules and their continuous-time interpolants.
//!
//! Step `i = 0` is always the clean data level. Steps `1..=N` follow the
//! kind-specific discretization: linear β for VP, geometric σ for VE.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScheduleKind {
    /// Variance preserving: `x_i = √ᾱ_i x_0 + √(1−ᾱ_i) ε`.
    Vp,
    /// Variance exploding: `x_i = x_0 + σ_i ε`.
    Ve,
}

/// Marginal perturbation `x_t = alpha · x_0 + sigma · ε` at continuous time `t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseLevel {
    pub t: f64,
    pub alpha: f64,
    pub sigma: f64,
}

impl NoiseLevel {
    pub const CLEAN: NoiseLevel = NoiseLevel {
        t: 0.0,
        alpha: 1.0,
        sigma: 0.0,
    };

    pub fn variance(&self) -> f64 {
        self.sigma * self.sigma
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Continuous {
    /// β̄(t) = a + (b − a) t.
    LinearBeta { a: f64, b: f64 },
    /// Piecewise-linear log ᾱ through the discrete grid `t_i = i/N`.
    Tabulated,
    /// σ(t) = σ_min (σ_max/σ_min)^t.
    Geometric { sigma_min: f64, sigma_max: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    kind: ScheduleKind,
    /// β_1..β_N (VP only).
    betas: Vec<f64>,
    /// ᾱ_0..ᾱ_N, ᾱ_0 = 1 (VP only).
    alpha_bar: Vec<f64>,
    /// σ_0..σ_N, σ_0 = 0 (VE only).
    sigmas: Vec<f64>,
    continuous: Continuous,
}

/// Endpoint description used by configs and presets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleSpec {
    pub kind: ScheduleKind,
    pub steps: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta_min: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta_max: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma_min: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma_max: Option<f64>,
}

impl Default for ScheduleSpec {
    fn default() -> Self {
        ScheduleSpec {
            kind: ScheduleKind::Vp,
            steps: 1000,
            beta_min: Some(1e-4),
            beta_max: Some(0.02),
            sigma_min: None,
            sigma_max: None,
        }
    }
}

pub fn build_schedule(spec: &ScheduleSpec) -> Result<NoiseSchedule> {
    match spec.kind {
        ScheduleKind::Vp => NoiseSchedule::vp_linear(
            spec.beta_min.unwrap_or(1e-4),
            spec.beta_max.unwrap_or(0.02),
            spec.steps,
        ),
        ScheduleKind::Ve => NoiseSchedule::ve_geometric(
            spec.sigma_min.unwrap_or(0.01),
            spec.sigma_max.unwrap_or(10.0),
            spec.steps,
        ),
    }
}

fn cumulative_alpha_bar(betas: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(betas.len() + 1);
    let mut acc = 1.0;
    out.push(acc);
    for b in betas {
        acc *= 1.0 - b;
        out.push(acc);
    }
    out
}

impl NoiseSchedule {
    /// VP schedule with β linearly interpolated from `beta_min` to `beta_max`.
    pub fn vp_linear(beta_min: f64, beta_max: f64, steps: usize) -> Result<Self> {
        if steps == 0 {
            return Err(Error::invalid("steps", "must be at least 1"));
        }
        if !(beta_min > 0.0 && beta_min <= beta_max && beta_max < 1.0) {
            return Err(Error::invalid(
                "beta",
                format!("need 0 < beta_min <= beta_max < 1, got {beta_min}..{beta_max}"),
            ));
        }
        let betas: Vec<f64> = if steps == 1 {
            vec![beta_min]
        } else {
            (0..steps)
                .map(|k| beta_min + (beta_max - beta_min) * k as f64 / (steps - 1) as f64)
                .collect()
        };
        let n = steps as f64;
        Ok(NoiseSchedule {
            kind: ScheduleKind::Vp,
            alpha_bar: cumulative_alpha_bar(&betas),
            betas,
            sigmas: Vec::new(),
            continuous: Continuous::LinearBeta {
                a: n * beta_min,
                b: n * beta_max,
            },
        })
    }

    /// VP schedule from an explicit nondecreasing β sequence.
    pub fn vp_from_betas(betas: Vec<f64>) -> Result<Self> {
        if betas.is_empty() {
            return Err(Error::invalid("betas", "empty"));
        }
        if betas.iter().any(|&b| !(b > 0.0 && b < 1.0)) {
            return Err(Error::invalid("betas", "every beta must lie in (0, 1)"));
        }
        if betas.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::invalid("betas", "must be nondecreasing"));
        }
        Ok(NoiseSchedule {
            kind: ScheduleKind::Vp,
            alpha_bar: cumulative_alpha_bar(&betas),
            betas,
            sigmas: Vec::new(),
            continuous: Continuous::Tabulated,
        })
    }

    /// VE schedule with σ geometrically interpolated from `sigma_min` to `sigma_max`.
    pub fn ve_geometric(sigma_min: f64, sigma_max: f64, steps: usize) -> Result<Self> {
        if steps < 2 {
            return Err(Error::invalid("steps", "VE schedule needs at least 2 steps"));
        }
        if !(sigma_min > 0.0 && sigma_min < sigma_max && sigma_max.is_finite()) {
            return Err(Error::invalid(
                "sigma",
                format!("need 0 < sigma_min < sigma_max, got {sigma_min}..{sigma_max}"),
            ));
        }
        let ratio = sigma_max / sigma_min;
        let mut sigmas = Vec::with_capacity(steps + 1);
        sigmas.push(0.0);
        for k in 0..steps {
            let frac = k as f64 / (steps - 1) as f64;
            sigmas.push(sigma_min * ratio.powf(frac));
        }
        // Pin the endpoints against powf rounding.
        sigmas[1] = sigma_min;
        sigmas[steps] = sigma_max;
        Ok(NoiseSchedule {
            kind: ScheduleKind::Ve,
            betas: Vec::new(),
            alpha_bar: vec![1.0; steps + 1],
            sigmas,
            continuous: Continuous::Geometric {
                sigma_min,
                sigma_max,
            },
        })
    }

    pub fn kind(&self) -> ScheduleKind {
        self.kind
    }

    /// Number of noisy steps N.
    pub fn steps(&self) -> usize {
        match self.kind {
            ScheduleKind::Vp => self.betas.len(),
            ScheduleKind::Ve => self.sigmas.len() - 1,
        }
    }

    /// β_i for `1 <= i <= N` (VP).
    pub fn beta(&self, i: usize) -> f64 {
        self.betas[i - 1]
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    /// ᾱ_i for `0 <= i <= N`; identically 1 for VE.
    pub fn alpha_bar(&self, i: usize) -> f64 {
        self.alpha_bar[i]
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bar
    }

    /// σ_i for VE, `0 <= i <= N`.
    pub fn ve_sigma(&self, i: usize) -> f64 {
        self.sigmas[i]
    }

    /// Continuous time attached to step `i`.
    pub fn time(&self, i: usize) -> f64 {
        let n = self.steps();
        match self.kind {
            ScheduleKind::Vp => i as f64 / n as f64,
            ScheduleKind::Ve => {
                if i == 0 {
                    0.0
                } else {
                    (i - 1) as f64 / (n - 1) as f64
                }
            }
        }
    }

    /// Nearest discrete step for a continuous time in [0, 1].
    pub fn index_of(&self, t: f64) -> usize {
        let n = self.steps();
        let t = t.clamp(0.0, 1.0);
        match self.kind {
            ScheduleKind::Vp => (t * n as f64).round() as usize,
            ScheduleKind::Ve => 1 + (t * (n - 1) as f64).round() as usize,
        }
    }

    /// Marginal level of discrete step `i`.
    pub fn level(&self, i: usize) -> NoiseLevel {
        match self.kind {
            ScheduleKind::Vp => {
                let ab = self.alpha_bar[i];
                NoiseLevel {
                    t: self.time(i),
                    alpha: ab.sqrt(),
                    sigma: (1.0 - ab).sqrt(),
                }
            }
            ScheduleKind::Ve => NoiseLevel {
                t: self.time(i),
                alpha: 1.0,
                sigma: self.sigmas[i],
            },
        }
    }

    /// Continuous ᾱ(t) (VP).
    pub fn alpha_bar_at(&self, t: f64) -> f64 {
        match &self.continuous {
            Continuous::LinearBeta { a, b } => (-(a * t + 0.5 * (b - a) * t * t)).exp(),
            Continuous::Tabulated => {
                let n = self.betas.len();
                let pos = (t.clamp(0.0, 1.0) * n as f64).min(n as f64);
                let lo = (pos.floor() as usize).min(n - 1);
                let frac = pos - lo as f64;
                let l0 = self.alpha_bar[lo].ln();
                let l1 = self.alpha_bar[lo + 1].ln();
                (l0 + frac * (l1 - l0)).exp()
            }
            Continuous::Geometric { .. } => 1.0,
        }
    }

    /// Continuous β̄(t) = −d ln ᾱ/dt (VP).
    pub fn beta_at(&self, t: f64) -> f64 {
        match &self.continuous {
            Continuous::LinearBeta { a, b } => a + (b - a) * t,
            Continuous::Tabulated => {
                let n = self.betas.len();
                let k = ((t.clamp(0.0, 1.0) * n as f64).ceil() as usize).clamp(1, n);
                -(n as f64) * (1.0 - self.betas[k - 1]).ln()
            }
            Continuous::Geometric { .. } => 0.0,
        }
    }

    /// Continuous σ(t) (VE).
    pub fn ve_sigma_at(&self, t: f64) -> f64 {
        match &self.continuous {
            Continuous::Geometric {
                sigma_min,
                sigma_max,
            } => sigma_min * (sigma_max / sigma_min).powf(t),
            _ => 0.0,
        }
    }

    /// Marginal level at continuous time `t`.
    pub fn level_at(&self, t: f64) -> NoiseLevel {
        match self.kind {
            ScheduleKind::Vp => {
                let ab = self.alpha_bar_at(t);
                NoiseLevel {
                    t,
                    alpha: ab.sqrt(),
                    sigma: (1.0 - ab).max(0.0).sqrt(),
                }
            }
            ScheduleKind::Ve => NoiseLevel {
                t,
                alpha: 1.0,
                sigma: self.ve_sigma_at(t),
            },
        }
    }

    /// Coefficients `(a, b)` of the probability-flow field `dx/dt = a x + b s(x, t)`.
    pub fn flow_coefficients(&self, t: f64) -> (f64, f64) {
        match self.kind {
            ScheduleKind::Vp => {
                let beta = self.beta_at(t);
                (-0.5 * beta, -0.5 * beta)
            }
            ScheduleKind::Ve => {
                let Continuous::Geometric {
                    sigma_min,
                    sigma_max,
                } = self.continuous
                else {
                    unreachable!("VE schedules are geometric")
                };
                let s = self.ve_sigma_at(t);
                // dσ²/dt = 2 σ² ln(σ_max/σ_min)
                (0.0, -s * s * (sigma_max / sigma_min).ln())
            }
        }
    }

    /// Variance of the terminal prior the reverse samplers start from.
    pub fn terminal_variance(&self) -> f64 {
        match self.kind {
            ScheduleKind::Vp => 1.0,
            ScheduleKind::Ve => {
                let s = self.sigmas[self.steps()];
                s * s
            }
        }
    }
}
