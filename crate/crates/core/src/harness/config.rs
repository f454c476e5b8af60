//! Experiment configuration: a strict TOML document.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::channel::{ChannelSpec, EncoderSpec};
use crate::diffusion::ScheduleSpec;
use crate::distributions::MixtureSpec;
use crate::error::{Error, Result};
use crate::guidance::GuidanceConfig;
use crate::receiver::{DecoderConfig, ReferenceKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    SamplerFidelity,
    DsmTraining,
    DpsConjugate,
    DiffcomSweep,
    BlindGain,
    FlowTransport,
    SolverConvergence,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 7] = [
        ExperimentKind::SamplerFidelity,
        ExperimentKind::DsmTraining,
        ExperimentKind::DpsConjugate,
        ExperimentKind::DiffcomSweep,
        ExperimentKind::BlindGain,
        ExperimentKind::FlowTransport,
        ExperimentKind::SolverConvergence,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::SamplerFidelity => "sampler_fidelity",
            ExperimentKind::DsmTraining => "dsm_training",
            ExperimentKind::DpsConjugate => "dps_conjugate",
            ExperimentKind::DiffcomSweep => "diffcom_sweep",
            ExperimentKind::BlindGain => "blind_gain",
            ExperimentKind::FlowTransport => "flow_transport",
            ExperimentKind::SolverConvergence => "solver_convergence",
        }
    }

    pub fn description(self) -> &'static str {
        match self {
            ExperimentKind::SamplerFidelity => "moments and W1 of every sampler against the source",
            ExperimentKind::DsmTraining => "train a score network by DSM and compare with the analytic score",
            ExperimentKind::DpsConjugate => "DPS sampling against the conjugate Gaussian posterior",
            ExperimentKind::DiffcomSweep => "DiffCom receiver MSE across channel SNR",
            ExperimentKind::BlindGain => "blind joint (x, h) decoding against a grid MAP and a mismatched gain",
            ExperimentKind::FlowTransport => "flow-matching transport N(0,1) to the source",
            ExperimentKind::SolverConvergence => "PF-ODE endpoint error against a fine reference solve",
        }
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ExperimentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ExperimentKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown experiment `{s}`")))
    }
}

/// Sampler or solver named on a sweep axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    ReverseSde,
    Langevin,
    Euler,
    Rk4,
    PredictorCorrector,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::ReverseSde => "reverse_sde",
            Method::Langevin => "langevin",
            Method::Euler => "euler",
            Method::Rk4 => "rk4",
            Method::PredictorCorrector => "predictor_corrector",
        }
    }
}

/// Swept axes. An empty axis falls back to the single value implied by the
/// rest of the config.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sweep {
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub snr_db: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub gamma: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub lambda: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub steps: Vec<usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub method: Vec<Method>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VelocitySource {
    /// Exact marginal velocity; needs a zero-mean isotropic Gaussian source.
    #[default]
    Analytic,
    /// Network trained by flow matching for `train_steps` steps.
    Trained,
}

/// Experiment-specific scalars.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunParams {
    /// Chains, test points or transported points per row.
    #[serde(default = "d_samples")]
    pub samples: usize,
    #[serde(default = "d_snr")]
    pub snr_db: f64,
    /// Measurement used by `dps_conjugate`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub measurement: Option<Vec<f64>>,
    /// Noise standard deviation used by `dps_conjugate`.
    #[serde(default = "d_one")]
    pub sigma_n: f64,
    #[serde(default = "d_reference")]
    pub reference: ReferenceKind,
    /// PSNR peak value.
    #[serde(default = "d_one")]
    pub peak: f64,
    #[serde(default = "d_train_steps")]
    pub train_steps: usize,
    #[serde(default = "d_lr")]
    pub learning_rate: f64,
    #[serde(default = "d_batch")]
    pub batch_size: usize,
    /// Langevin step size in `sampler_fidelity`.
    #[serde(default = "d_zeta")]
    pub langevin_zeta: f64,
    #[serde(default = "d_langevin_steps")]
    pub langevin_steps: usize,
    /// Gain prior of `blind_gain`.
    #[serde(default = "d_one")]
    pub gain_mean: f64,
    #[serde(default = "d_gain_var")]
    pub gain_var: f64,
    /// Per-axis grid resolution of the MAP oracle.
    #[serde(default = "d_grid")]
    pub grid: usize,
    /// Steps of the reference solve in `solver_convergence`.
    #[serde(default = "d_reference_steps")]
    pub reference_steps: usize,
    /// Velocity field transported by `flow_transport`.
    #[serde(default)]
    pub velocity: VelocitySource,
    /// Emit a `runtime_ms` column. Off by default so outputs are byte-stable.
    #[serde(default)]
    pub report_runtime: bool,
}

fn d_samples() -> usize {
    1000
}
fn d_snr() -> f64 {
    10.0
}
fn d_one() -> f64 {
    1.0
}
fn d_reference() -> ReferenceKind {
    ReferenceKind::PseudoInverse
}
fn d_train_steps() -> usize {
    5000
}
fn d_lr() -> f64 {
    5e-4
}
fn d_batch() -> usize {
    128
}
fn d_zeta() -> f64 {
    0.01
}
fn d_langevin_steps() -> usize {
    2000
}
fn d_gain_var() -> f64 {
    0.04
}
fn d_grid() -> usize {
    201
}
fn d_reference_steps() -> usize {
    10_000
}

impl Default for RunParams {
    fn default() -> Self {
        toml::from_str("").expect("all run parameters have defaults")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub seeds: Vec<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_path: Option<String>,
    pub source: MixtureSpec,
    #[serde(default)]
    pub schedule: ScheduleSpec,
    #[serde(default = "d_channel")]
    pub channel: ChannelSpec,
    #[serde(default = "d_encoder")]
    pub encoder: EncoderSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decoder: Option<DecoderConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub guidance: Option<GuidanceConfig>,
    #[serde(default)]
    pub sweep: Sweep,
    #[serde(default)]
    pub run: RunParams,
}

fn d_channel() -> ChannelSpec {
    ChannelSpec::Awgn
}
fn d_encoder() -> EncoderSpec {
    EncoderSpec::Identity
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].bytes().filter(|b| *b == b'\n').count() + 1
}

/// Parses and validates a config. Errors carry the 1-based line number when
/// the parser reports a location.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| {
        let msg = e.message().trim().to_string();
        match e.span() {
            Some(span) => {
                let line = line_of(text, span.start);
                let src = text.lines().nth(line - 1).unwrap_or("");
                match src.split_once('=') {
                    Some((key, _)) if !src.trim_start().starts_with('[') => {
                        Error::Config(format!("line {line}, key `{}`: {msg}", key.trim()))
                    }
                    _ => Error::Config(format!("line {line}: {msg}")),
                }
            }
            None => Error::Config(msg),
        }
    })?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)?;
    parse_config(&text).map_err(|e| e.annotate(path.display().to_string()))
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Config(what.to_string()));
        if self.seeds.is_empty() {
            return bad("`seeds` needs at least one seed");
        }
        let gmm = self.source.build()?;
        crate::diffusion::build_schedule(&self.schedule)?;
        self.channel.build()?;
        self.encoder.build(gmm.dim())?;
        if let Some(d) = &self.decoder {
            d.validate()?;
        }
        if let Some(g) = &self.guidance {
            g.validate()?;
        }
        let r = &self.run;
        if r.samples == 0 {
            return bad("`run.samples` must be at least 1");
        }
        if !r.snr_db.is_finite() && r.snr_db != f64::INFINITY {
            return bad("`run.snr_db` must be a number or +inf");
        }
        if self.sweep.snr_db.iter().any(|s| s.is_nan() || *s == f64::NEG_INFINITY) {
            return bad("`sweep.snr_db` entries must be numbers or +inf");
        }
        if self.sweep.gamma.iter().any(|g| !(g.is_finite() && *g >= 0.0)) {
            return bad("`sweep.gamma` entries must be finite and nonnegative");
        }
        if self.sweep.lambda.iter().any(|g| !(g.is_finite() && *g >= 0.0)) {
            return bad("`sweep.lambda` entries must be finite and nonnegative");
        }
        if self.sweep.steps.contains(&0) {
            return bad("`sweep.steps` entries must be at least 1");
        }
        if !(r.sigma_n > 0.0 && r.sigma_n.is_finite()) {
            return bad("`run.sigma_n` must be positive");
        }
        if !(r.peak > 0.0 && r.peak.is_finite()) {
            return bad("`run.peak` must be positive");
        }
        if !(r.learning_rate > 0.0 && r.learning_rate.is_finite()) || r.batch_size == 0 {
            return bad("`run.learning_rate` must be positive and `run.batch_size` at least 1");
        }
        if !(r.langevin_zeta > 0.0 && r.langevin_zeta.is_finite()) || r.langevin_steps == 0 {
            return bad("`run.langevin_zeta` must be positive and `run.langevin_steps` at least 1");
        }
        if !(r.gain_var > 0.0 && r.gain_var.is_finite() && r.gain_mean.is_finite()) {
            return bad("`run.gain_mean` must be finite and `run.gain_var` positive");
        }
        if r.grid < 16 {
            return bad("`run.grid` must be at least 16");
        }
        if r.reference_steps == 0 {
            return bad("`run.reference_steps` must be at least 1");
        }
        if let Some(y) = &r.measurement {
            if y.iter().any(|v| !v.is_finite()) {
                return bad("`run.measurement` must be finite");
            }
        }
        Ok(())
    }

    /// Canonical TOML form; parsing it yields an equal config.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}
