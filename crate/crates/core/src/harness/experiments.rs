//! The seven preset experiments. Each parameter point of the sweep cross
//! product is run once per seed; rows come back in cross-product order
//! (`snr_db`, `gamma`, `lambda`, `steps`, `method`, then seed) however the
//! work was scheduled.

use std::collections::HashMap;
use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;

use super::config::{ExperimentConfig, ExperimentKind, Method, VelocitySource};
use super::csv::ReportRow;
use crate::channel::{compose, noise_sigma, Channel, ForwardOperator};
use crate::diffusion::ode::Solver;
use crate::diffusion::{build_schedule, langevin, pf_ode, reverse_sde, LangevinConfig, NoiseSchedule, OdeMethod, SampleBatch};
use crate::distributions::GaussianMixture;
use crate::error::{Error, Result};
use crate::flow::{fm_loss, fm_transport, train_fm, GaussianVelocity, TimeField};
use crate::guidance::{dps_score_at, GainFamily, GuidanceConfig, OperatorFamily};
use crate::metrics::{conjugate_posterior, grid_eval, moments, w1_1d};
use crate::net::{train_dsm, ScoreNetwork, TrainConfig};
use crate::receiver::{blind_diffcom_decode, diffcom_decode, DecoderConfig, ReferenceDecoder, SamplerKind};
use crate::rng::{chain_rng, derive_seed, normal_vec, tagged_rng, REFERENCE_TAG};
use crate::score::FnScore;

/// One parameter point. `None` means "use the config's own value".
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point {
    pub snr_db: f64,
    pub gamma: Option<f64>,
    pub lambda: Option<f64>,
    pub steps: Option<usize>,
    pub method: Option<Method>,
}

fn axis<T: Copy>(values: &[T]) -> Vec<Option<T>> {
    if values.is_empty() {
        vec![None]
    } else {
        values.iter().copied().map(Some).collect()
    }
}

fn default_methods(kind: ExperimentKind) -> Vec<Method> {
    match kind {
        ExperimentKind::SamplerFidelity => vec![
            Method::ReverseSde,
            Method::Langevin,
            Method::Euler,
            Method::Rk4,
            Method::PredictorCorrector,
        ],
        ExperimentKind::FlowTransport | ExperimentKind::SolverConvergence => vec![Method::Euler, Method::Rk4],
        _ => Vec::new(),
    }
}

fn default_steps(kind: ExperimentKind) -> Vec<usize> {
    match kind {
        ExperimentKind::SolverConvergence => vec![10, 20, 40, 80, 160],
        ExperimentKind::FlowTransport => vec![100],
        _ => Vec::new(),
    }
}

/// Cross product of the sweep axes in row order.
pub fn points(cfg: &ExperimentConfig) -> Vec<Point> {
    let s = &cfg.sweep;
    let snrs = if s.snr_db.is_empty() { vec![cfg.run.snr_db] } else { s.snr_db.clone() };
    let steps = if s.steps.is_empty() { default_steps(cfg.experiment) } else { s.steps.clone() };
    let methods = if s.method.is_empty() { default_methods(cfg.experiment) } else { s.method.clone() };
    let mut out = Vec::new();
    for &snr_db in &snrs {
        for gamma in axis(&s.gamma) {
            for lambda in axis(&s.lambda) {
                for st in axis(&steps) {
                    for method in axis(&methods) {
                        out.push(Point {
                            snr_db,
                            gamma,
                            lambda,
                            steps: st,
                            method,
                        });
                    }
                }
            }
        }
    }
    out
}

fn describe(p: &Point) -> String {
    let mut parts = vec![format!("snr_db={}", p.snr_db)];
    if let Some(g) = p.gamma {
        parts.push(format!("gamma={g}"));
    }
    if let Some(l) = p.lambda {
        parts.push(format!("lambda={l}"));
    }
    if let Some(s) = p.steps {
        parts.push(format!("steps={s}"));
    }
    if let Some(m) = p.method {
        parts.push(format!("method={}", m.name()));
    }
    parts.join(", ")
}

struct Ctx<'a> {
    cfg: &'a ExperimentConfig,
    gmm: GaussianMixture,
    sched: NoiseSchedule,
    /// Fine reference endpoints per seed (`solver_convergence`).
    references: HashMap<u64, Vec<Vec<f64>>>,
}

impl Ctx<'_> {
    fn schedule_with(&self, steps: Option<usize>) -> Result<NoiseSchedule> {
        match steps {
            Some(n) if n != self.sched.steps() => {
                let mut spec = self.cfg.schedule.clone();
                spec.steps = n;
                build_schedule(&spec)
            }
            _ => Ok(self.sched.clone()),
        }
    }
}

/// Runs every (point, seed) pair of the config. Deterministic given the
/// config unless `run.report_runtime` adds wall-clock timings.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<ReportRow>> {
    cfg.validate()?;
    let gmm = cfg.source.build()?;
    let sched = build_schedule(&cfg.schedule)?;
    let mut ctx = Ctx {
        cfg,
        gmm,
        sched,
        references: HashMap::new(),
    };
    if cfg.experiment == ExperimentKind::SolverConvergence {
        let refs: Vec<Result<(u64, Vec<Vec<f64>>)>> = cfg
            .seeds
            .par_iter()
            .map(|&seed| Ok((seed, solver_reference(&ctx, seed)?)))
            .collect();
        for r in refs {
            let (seed, pts) = r?;
            ctx.references.insert(seed, pts);
        }
    }
    let tasks: Vec<(Point, u64)> = points(cfg)
        .into_iter()
        .flat_map(|p| cfg.seeds.iter().map(move |&s| (p, s)))
        .collect();
    let rows: Vec<Result<ReportRow>> = tasks
        .par_iter()
        .map(|(p, seed)| {
            let start = Instant::now();
            let mut row = ReportRow::new()
                .with("experiment", cfg.experiment.name())
                .with("seed", *seed);
            run_point(&ctx, p, *seed, &mut row)
                .map_err(|e| e.annotate(format!("{} at {}, seed {seed}", cfg.experiment, describe(p))))?;
            if cfg.run.report_runtime {
                row.push("runtime_ms", start.elapsed().as_secs_f64() * 1e3);
            }
            Ok(row)
        })
        .collect();
    rows.into_iter().collect()
}

fn run_point(ctx: &Ctx, p: &Point, seed: u64, row: &mut ReportRow) -> Result<()> {
    match ctx.cfg.experiment {
        ExperimentKind::SamplerFidelity => sampler_fidelity(ctx, p, seed, row),
        ExperimentKind::DsmTraining => dsm_training(ctx, p, seed, row),
        ExperimentKind::DpsConjugate => dps_conjugate(ctx, p, seed, row),
        ExperimentKind::DiffcomSweep => diffcom_sweep(ctx, p, seed, row),
        ExperimentKind::BlindGain => blind_gain(ctx, p, seed, row),
        ExperimentKind::FlowTransport => flow_transport(ctx, p, seed, row),
        ExperimentKind::SolverConvergence => solver_convergence(ctx, p, seed, row),
    }
}

fn ode_method(m: Method, seed: u64) -> Result<OdeMethod> {
    match m {
        Method::Euler => Ok(OdeMethod::Euler),
        Method::Rk4 => Ok(OdeMethod::Rk4),
        Method::PredictorCorrector => Ok(OdeMethod::pc(seed)),
        other => Err(Error::Unsupported(format!("`{}` is not an ODE method", other.name()))),
    }
}

/// Fourth central moment of coordinate `d` under the mixture.
fn fourth_central_moment(gmm: &GaussianMixture, d: usize) -> f64 {
    let mu = gmm.mean()[d];
    let dim = gmm.dim();
    (0..gmm.n_components())
        .map(|k| {
            let delta = gmm.mean_of(k)[d] - mu;
            let s = gmm.covariance_of(k)[d * dim + d];
            gmm.weights()[k] * (delta.powi(4) + 6.0 * delta * delta * s + 3.0 * s * s)
        })
        .sum()
}

fn sampler_fidelity(ctx: &Ctx, p: &Point, seed: u64, row: &mut ReportRow) -> Result<()> {
    let gmm = &ctx.gmm;
    let run = &ctx.cfg.run;
    let (n, d) = (run.samples, gmm.dim());
    let method = p.method.unwrap_or(Method::ReverseSde);
    let sched = ctx.schedule_with(p.steps)?;
    let (batch, steps) = match method {
        Method::ReverseSde => (reverse_sde(gmm, &sched, n, seed)?, sched.steps()),
        Method::Langevin => {
            let steps = p.steps.unwrap_or(run.langevin_steps);
            let init = SampleBatch::gaussian(n, d, 1.0, 0, seed);
            let lcfg = LangevinConfig::new(run.langevin_zeta, steps);
            (langevin(|x| gmm.score(x).unwrap_or_else(|_| vec![f64::NAN; d]), &init, lcfg, seed)?, steps)
        }
        m => {
            let init = SampleBatch::gaussian(n, d, sched.terminal_variance(), sched.steps(), seed);
            let steps = p.steps.unwrap_or(sched.steps());
            (pf_ode(gmm, &sched, ode_method(m, seed)?, steps, &init, false)?.batch, steps)
        }
    };
    let (mean, cov) = moments(&batch.points)?;
    let (mu, sigma) = (gmm.mean(), gmm.covariance());
    let (mut mean_err, mut var_err, mut mean_z, mut var_z) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for k in 0..d {
        let v = sigma[k * d + k];
        let em = (mean[k] - mu[k]).abs();
        let ev = (cov[k * d + k] - v).abs();
        let se_v = ((fourth_central_moment(gmm, k) - v * v) / n as f64).sqrt();
        mean_err = mean_err.max(em);
        var_err = var_err.max(ev);
        mean_z = mean_z.max(em / (v / n as f64).sqrt());
        var_z = var_z.max(ev / se_v);
    }
    let fresh = gmm.sample_points(n, seed ^ REFERENCE_TAG);
    let w1 = w1_1d(&batch.column(0), &fresh.iter().map(|x| x[0]).collect::<Vec<_>>())?;
    row.push("method", method.name());
    row.push("steps", steps);
    row.push("samples", n);
    row.push("mean_err", mean_err);
    row.push("var_err", var_err);
    row.push("mean_z", mean_z);
    row.push("var_z", var_z);
    row.push("w1", w1);
    Ok(())
}

/// Mean squared per-coordinate error of `net` against the analytic score,
/// averaged over `t ∈ {0.1, 0.5, 0.9}` and `n` points drawn uniformly from
/// the ±3σ box of each perturbed marginal.
pub fn score_mse(net: &ScoreNetwork, gmm: &GaussianMixture, sched: &NoiseSchedule, n: usize, seed: u64) -> f64 {
    let ts = [0.1, 0.5, 0.9];
    let d = gmm.dim();
    let (mu, cov) = (gmm.mean(), gmm.covariance());
    let mut total = 0.0;
    for (k, &t) in ts.iter().enumerate() {
        let level = sched.level_at(t);
        let mut rng = chain_rng(derive_seed(seed, k as u64), 0);
        for _ in 0..n {
            let x: Vec<f64> = (0..d)
                .map(|j| {
                    let sd = (level.alpha * level.alpha * cov[j * d + j] + level.variance()).sqrt();
                    level.alpha * mu[j] + 3.0 * sd * rng.random_range(-1.0..=1.0)
                })
                .collect();
            let a = net.forward(&x, t);
            let b = gmm.score_at(&x, level);
            total += a.iter().zip(&b).map(|(u, v)| (u - v) * (u - v)).sum::<f64>() / d as f64;
        }
    }
    total / (ts.len() * n) as f64
}

fn window_mean(v: &[f64], first: bool) -> f64 {
    let w = v.len().min(1000);
    let s = if first { &v[..w] } else { &v[v.len() - w..] };
    s.iter().sum::<f64>() / w as f64
}

fn dsm_training(ctx: &Ctx, p: &Point, seed: u64, row: &mut ReportRow) -> Result<()> {
    let run = &ctx.cfg.run;
    let steps = p.steps.unwrap_or(run.train_steps);
    let tc = TrainConfig {
        learning_rate: run.learning_rate,
        steps,
        batch_size: run.batch_size,
        seed,
        ..TrainConfig::default()
    };
    let net = ScoreNetwork::default_arch(ctx.gmm.dim(), seed)?;
    let out = train_dsm(&net, &ctx.gmm, &ctx.sched, &tc)?;
    row.push("train_steps", steps);
    row.push("learning_rate", run.learning_rate);
    row.push("batch_size", run.batch_size);
    row.push("loss_first", window_mean(&out.losses, true));
    row.push("loss_last", window_mean(&out.losses, false));
    row.push("score_mse", score_mse(&out.net, &ctx.gmm, &ctx.sched, run.samples, seed ^ REFERENCE_TAG));
    Ok(())
}

fn relative(err: f64, reference: f64) -> f64 {
    if reference != 0.0 {
        err / reference.abs()
    } else {
        err
    }
}

fn dps_conjugate(ctx: &Ctx, p: &Point, seed: u64, row: &mut ReportRow) -> Result<()> {
    let gmm = &ctx.gmm;
    let run = &ctx.cfg.run;
    if gmm.n_components() != 1 {
        return Err(Error::Unsupported("dps_conjugate needs a single Gaussian source".into()));
    }
    let d = gmm.dim();
    let op = compose(ctx.cfg.encoder.build(d)?, Channel::Awgn, run.sigma_n)?;
    let (k, k0) = match (op.matrix(), op.offset()) {
        (Some(k), Some(k0)) => (k, k0),
        _ => return Err(Error::Unsupported("dps_conjugate needs a linear encoder".into())),
    };
    let m = op.out_dim();
    let y = run.measurement.clone().unwrap_or_else(|| vec![2.0; m]);
    if y.len() != m {
        return Err(Error::Config(format!("`run.measurement` needs {m} entries")));
    }
    let base = ctx.cfg.guidance.unwrap_or_else(|| GuidanceConfig::gaussian(run.sigma_n));
    let g = GuidanceConfig {
        gamma: p.gamma.unwrap_or(base.gamma),
        ..base
    };
    g.validate()?;
    let sched = ctx.schedule_with(p.steps)?;
    let guided = FnScore::new(d, |x: &[f64], level| {
        dps_score_at(gmm, &op, &y, x, level, &g).unwrap_or_else(|_| vec![f64::NAN; d])
    });
    let batch = reverse_sde(&guided, &sched, run.samples, seed)?;
    let y_eff: Vec<f64> = y.iter().zip(&k0).map(|(a, b)| a - b).collect();
    let post = conjugate_posterior(&gmm.mean(), &gmm.covariance(), &k, m, run.sigma_n, &y_eff)?;
    let (mean, cov) = moments(&batch.points)?;
    let (mut me, mut ve, mut mr, mut vr) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for j in 0..d {
        let em = (mean[j] - post.mean[j]).abs();
        let ev = (cov[j * d + j] - post.covariance[j * d + j]).abs();
        me = me.max(em);
        ve = ve.max(ev);
        mr = mr.max(relative(em, post.mean[j]));
        vr = vr.max(relative(ev, post.covariance[j * d + j]));
    }
    row.push("gamma", g.gamma);
    row.push("steps", sched.steps());
    row.push("samples", run.samples);
    row.push("sample_mean", mean[0]);
    row.push("sample_var", cov[0]);
    row.push("posterior_mean", post.mean[0]);
    row.push("posterior_var", post.covariance[0]);
    row.push("mean_abs_err", me);
    row.push("var_abs_err", ve);
    row.push("mean_rel_err", mr);
    row.push("var_rel_err", vr);
    Ok(())
}

fn sampler_kind(m: Method) -> Result<SamplerKind> {
    match m {
        Method::ReverseSde => Ok(SamplerKind::ReverseSde),
        Method::Euler => Ok(SamplerKind::Euler),
        Method::Rk4 => Ok(SamplerKind::Rk4),
        Method::PredictorCorrector => Ok(SamplerKind::PredictorCorrector),
        Method::Langevin => Err(Error::Unsupported("the receiver has no Langevin sampler".into())),
    }
}

fn sampler_name(s: SamplerKind) -> &'static str {
    match s {
        SamplerKind::ReverseSde => "reverse_sde",
        SamplerKind::Euler => "euler",
        SamplerKind::Rk4 => "rk4",
        SamplerKind::PredictorCorrector => "predictor_corrector",
    }
}

/// Decoder settings at a point, with the schedule the sampler walks.
fn decoder_at(ctx: &Ctx, p: &Point) -> Result<(DecoderConfig, NoiseSchedule)> {
    let mut dc = ctx.cfg.decoder.unwrap_or_else(|| DecoderConfig::new(1.0, 0.0));
    if let Some(g) = p.gamma {
        dc.gamma = g;
    }
    if let Some(l) = p.lambda {
        dc.lambda = l;
    }
    if let Some(m) = p.method {
        dc.sampler = sampler_kind(m)?;
    }
    let mut sched = ctx.sched.clone();
    if let Some(s) = p.steps {
        if dc.sampler == SamplerKind::ReverseSde {
            sched = ctx.schedule_with(Some(s))?;
        } else {
            dc.steps = s;
        }
    }
    dc.validate()?;
    Ok((dc, sched))
}

fn steps_of(dc: &DecoderConfig, sched: &NoiseSchedule) -> usize {
    if dc.sampler == SamplerKind::ReverseSde {
        sched.steps()
    } else {
        dc.steps
    }
}

fn forward_operator(ctx: &Ctx, snr_db: f64) -> Result<ForwardOperator> {
    let enc = ctx.cfg.encoder.build(ctx.gmm.dim())?;
    compose(enc, ctx.cfg.channel.build()?, noise_sigma(snr_db))?.calibrate_power(&ctx.gmm, 0)
}

fn noisy(mean: Vec<f64>, sigma_n: f64, seed: u64) -> Vec<f64> {
    let mut rng = tagged_rng(seed, crate::rng::NOISE_TAG, 0);
    let z = normal_vec(&mut rng, mean.len());
    mean.iter().zip(z).map(|(a, b)| a + sigma_n * b).collect()
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(u, v)| (u - v) * (u - v)).sum()
}

fn diffcom_sweep(ctx: &Ctx, p: &Point, seed: u64, row: &mut ReportRow) -> Result<()> {
    let run = &ctx.cfg.run;
    let gmm = &ctx.gmm;
    let (dc, sched) = decoder_at(ctx, p)?;
    let op = forward_operator(ctx, p.snr_db)?;
    let dec = ReferenceDecoder::build(run.reference, &op, gmm, 0)?;
    let xs = gmm.sample_points(run.samples, seed);
    let d = gmm.dim() as f64;
    let (mut mse, mut ref_mse, mut residual, mut start) = (0.0, 0.0, 0.0, 0.0);
    for (k, x) in xs.iter().enumerate() {
        let s = derive_seed(seed, k as u64);
        let y = noisy(op.mean(x), op.sigma_n(), s);
        let out = diffcom_decode(&y, &op, gmm, gmm, &sched, &dc, &dec, s)?;
        mse += sq_dist(x, &out.x) / d;
        ref_mse += sq_dist(x, &dec.decode(&y)) / d;
        residual += sq_dist(&y, &op.mean(&out.x)).sqrt();
        start += out.start_step as f64;
    }
    let n = xs.len() as f64;
    let mse = mse / n;
    let psnr = 10.0 * (run.peak * run.peak / mse).log10();
    row.push("snr_db", p.snr_db);
    row.push("gamma", dc.gamma);
    row.push("lambda", dc.lambda);
    row.push("sampler", sampler_name(dc.sampler));
    row.push("steps", steps_of(&dc, &sched));
    row.push("mse", mse);
    row.push("psnr", if mse > 0.0 { psnr } else { f64::INFINITY });
    row.push("ref_mse", ref_mse / n);
    row.push("residual", residual / n);
    row.push("start_step", start / n);
    Ok(())
}

/// Outcome of one blind-gain trial.
#[derive(Debug, Clone, PartialEq)]
pub struct BlindTrial {
    pub x_true: f64,
    pub h_true: f64,
    pub x_hat: f64,
    pub h_hat: f64,
    pub map: (f64, f64),
    pub in_map_cell: bool,
    pub in_hpd90: bool,
    pub residual_blind: f64,
    pub residual_mismatched: f64,
    /// `‖y − ĥ A(x̂)‖` and `‖y − h₀ A(x̂)‖`: each decoder's fit under its own operator.
    pub model_residual_blind: f64,
    pub model_residual_mismatched: f64,
}

/// Draws `(x, h)` and a measurement from `seed`, decodes blindly and with
/// the gain fixed at the prior mean, and locates the blind estimate on a
/// grid of the exact joint posterior. Residuals use the true operator.
#[allow(clippy::too_many_arguments)]
pub fn blind_trial(
    gmm: &GaussianMixture,
    base: &ForwardOperator,
    sched: &NoiseSchedule,
    dc: &DecoderConfig,
    gain_mean: f64,
    gain_var: f64,
    grid: usize,
    seed: u64,
) -> Result<BlindTrial> {
    if gmm.dim() != 1 {
        return Err(Error::Unsupported("blind_gain grids need a 1D source".into()));
    }
    let sigma = base.sigma_n();
    if !(sigma > 0.0) {
        return Err(Error::invalid("snr_db", "blind_gain needs a finite SNR"));
    }
    let family = OperatorFamily::new(base.clone(), GainFamily::Scalar);
    let mut rng = tagged_rng(seed, REFERENCE_TAG, 0);
    let x_true = gmm.sample_with(&mut rng).point;
    let h_true = gain_mean + gain_var.sqrt() * normal_vec(&mut rng, 1)[0];
    let y = noisy(family.apply_mean(&x_true, &[h_true]), sigma, seed);
    let h_prior = GaussianMixture::gaussian(vec![gain_mean], vec![gain_var])?;
    let blind = blind_diffcom_decode(&y, &family, gmm, &h_prior, sched, sched, dc, seed)?;

    let mismatched_op = family.at(&[gain_mean])?.with_sigma_n(sigma)?;
    let mdc = DecoderConfig { lambda: 0.0, ..*dc };
    let dec = ReferenceDecoder::conjugate_mean(&mismatched_op, gmm)?;
    let mism = diffcom_decode(&y, &mismatched_op, gmm, gmm, sched, &mdc, &dec, seed)?;

    let true_mean = |x: &[f64]| family.apply_mean(x, &[h_true]);
    let residual_blind = sq_dist(&y, &true_mean(&blind.x)).sqrt();
    let residual_mismatched = sq_dist(&y, &true_mean(&mism.x)).sqrt();
    let model_residual_blind = sq_dist(&y, &family.apply_mean(&blind.x, &blind.h)).sqrt();
    let model_residual_mismatched = sq_dist(&y, &mismatched_op.mean(&mism.x)).sqrt();

    let sd_x = gmm.covariance()[0].sqrt();
    let mu_x = gmm.mean()[0];
    let sd_h = gain_var.sqrt();
    let bounds = [(mu_x - 6.0 * sd_x, mu_x + 6.0 * sd_x), (gain_mean - 6.0 * sd_h, gain_mean + 6.0 * sd_h)];
    let log_post = |p: &[f64]| {
        let lx = gmm.log_density(&p[..1]).unwrap_or(f64::NEG_INFINITY);
        let lh = -0.5 * (p[1] - gain_mean).powi(2) / gain_var;
        let r = sq_dist(&y, &family.apply_mean(&p[..1], &p[1..]));
        lx + lh - r / (2.0 * sigma * sigma)
    };
    let g = grid_eval(log_post, &bounds, &[grid, grid])?;
    let best = g.argmax();
    let map = g.point(best);
    let cell = g.nearest(&[blind.x[0], blind.h[0]]);
    let threshold = g.hpd_threshold(0.9);
    Ok(BlindTrial {
        x_true: x_true[0],
        h_true,
        x_hat: blind.x[0],
        h_hat: blind.h[0],
        map: (map[0], map[1]),
        in_map_cell: cell == Some(best),
        in_hpd90: cell.is_some_and(|c| g.values[c] >= threshold),
        residual_blind,
        residual_mismatched,
        model_residual_blind,
        model_residual_mismatched,
    })
}

fn blind_gain(ctx: &Ctx, p: &Point, seed: u64, row: &mut ReportRow) -> Result<()> {
    let run = &ctx.cfg.run;
    let (dc, sched) = decoder_at(ctx, p)?;
    let base = forward_operator(ctx, p.snr_db)?;
    let t = blind_trial(&ctx.gmm, &base, &sched, &dc, run.gain_mean, run.gain_var, run.grid, seed)?;
    row.push("snr_db", p.snr_db);
    row.push("gamma", dc.gamma);
    row.push("x_true", t.x_true);
    row.push("h_true", t.h_true);
    row.push("x_hat", t.x_hat);
    row.push("h_hat", t.h_hat);
    row.push("map_x", t.map.0);
    row.push("map_h", t.map.1);
    row.push("in_map_cell", t.in_map_cell as u64);
    row.push("in_hpd90", t.in_hpd90 as u64);
    row.push("residual_blind", t.residual_blind);
    row.push("residual_mismatched", t.residual_mismatched);
    row.push("model_residual_blind", t.model_residual_blind);
    row.push("model_residual_mismatched", t.model_residual_mismatched);
    Ok(())
}

/// `Some(v)` when the mixture is a single zero-mean isotropic Gaussian `N(0, v I)`.
fn isotropic_variance(gmm: &GaussianMixture) -> Option<f64> {
    let d = gmm.dim();
    let cov = gmm.covariance();
    let v = cov[0];
    let iso = (0..d).all(|r| (0..d).all(|c| cov[r * d + c] == if r == c { v } else { 0.0 }));
    (gmm.n_components() == 1 && gmm.mean().iter().all(|m| *m == 0.0) && iso).then_some(v)
}

fn flow_transport(ctx: &Ctx, p: &Point, seed: u64, row: &mut ReportRow) -> Result<()> {
    let run = &ctx.cfg.run;
    let gmm = &ctx.gmm;
    let d = gmm.dim();
    let method = match p.method.unwrap_or(Method::Rk4) {
        Method::Euler => Solver::Euler,
        Method::Rk4 => Solver::Rk4,
        other => return Err(Error::Unsupported(format!("flow transport has no `{}` solver", other.name()))),
    };
    let steps = p.steps.unwrap_or(100);
    let field: Box<dyn TimeField> = match run.velocity {
        VelocitySource::Analytic => {
            let v = isotropic_variance(gmm)
                .ok_or_else(|| Error::Unsupported("analytic velocity needs a zero-mean isotropic Gaussian source".into()))?;
            Box::new(GaussianVelocity::new(d, 1.0, v)?)
        }
        VelocitySource::Trained => {
            let tc = TrainConfig {
                learning_rate: run.learning_rate,
                steps: run.train_steps,
                batch_size: run.batch_size,
                seed,
                ..TrainConfig::default()
            };
            Box::new(train_fm(&ScoreNetwork::default_arch(d, seed)?, gmm, &tc)?.net)
        }
    };
    let x0 = SampleBatch::gaussian(run.samples, d, 1.0, 0, seed).points;
    let x1 = fm_transport(field.as_ref(), &x0, steps, method)?;
    let (_, cov) = moments(&x1)?;
    let fresh = gmm.sample_points(run.samples, seed ^ REFERENCE_TAG);
    let col = |pts: &[Vec<f64>]| pts.iter().map(|x| x[0]).collect::<Vec<_>>();
    row.push("method", if method == Solver::Euler { "euler" } else { "rk4" });
    row.push("steps", steps);
    row.push("samples", run.samples);
    row.push("variance", cov[0]);
    row.push("target_variance", gmm.covariance()[0]);
    row.push("w1", w1_1d(&col(&x1), &col(&fresh))?);
    row.push("fm_loss", fm_loss(field.as_ref(), gmm, run.samples, seed)?);
    Ok(())
}

fn solver_init(ctx: &Ctx, seed: u64) -> SampleBatch {
    SampleBatch::gaussian(ctx.cfg.run.samples, ctx.gmm.dim(), ctx.sched.terminal_variance(), ctx.sched.steps(), seed)
}

fn solver_reference(ctx: &Ctx, seed: u64) -> Result<Vec<Vec<f64>>> {
    let init = solver_init(ctx, seed);
    Ok(pf_ode(&ctx.gmm, &ctx.sched, OdeMethod::Rk4, ctx.cfg.run.reference_steps, &init, false)?
        .batch
        .points)
}

fn solver_convergence(ctx: &Ctx, p: &Point, seed: u64, row: &mut ReportRow) -> Result<()> {
    let method = p.method.unwrap_or(Method::Rk4);
    let steps = p.steps.unwrap_or(100);
    let init = solver_init(ctx, seed);
    let out = pf_ode(&ctx.gmm, &ctx.sched, ode_method(method, seed)?, steps, &init, false)?;
    let reference = &ctx.references[&seed];
    let err = out
        .batch
        .points
        .iter()
        .zip(reference)
        .map(|(a, b)| sq_dist(a, b).sqrt())
        .sum::<f64>()
        / reference.len() as f64;
    row.push("method", method.name());
    row.push("steps", steps);
    row.push("reference_steps", ctx.cfg.run.reference_steps);
    row.push("endpoint_err", err);
    Ok(())
}
