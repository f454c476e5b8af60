//! Configuration, preset experiments and CSV reporting.

pub mod config;
pub mod csv;
pub mod experiments;

use std::path::{Path, PathBuf};

pub use config::{load_config, parse_config, ExperimentConfig, ExperimentKind, Method, RunParams, Sweep, VelocitySource};
pub use csv::{format_f64, render_csv, write_csv, ReportRow, Value};
pub use experiments::{blind_trial, points, run_experiment, score_mse, BlindTrial, Point};

use crate::error::Result;

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "DIFFCOMM_OUT_DIR";

/// Bundled TOML text of a preset.
pub fn preset_text(kind: ExperimentKind) -> &'static str {
    match kind {
        ExperimentKind::SamplerFidelity => include_str!("../../configs/sampler_fidelity.toml"),
        ExperimentKind::DsmTraining => include_str!("../../configs/dsm_training.toml"),
        ExperimentKind::DpsConjugate => include_str!("../../configs/dps_conjugate.toml"),
        ExperimentKind::DiffcomSweep => include_str!("../../configs/diffcom_sweep.toml"),
        ExperimentKind::BlindGain => include_str!("../../configs/blind_gain.toml"),
        ExperimentKind::FlowTransport => include_str!("../../configs/flow_transport.toml"),
        ExperimentKind::SolverConvergence => include_str!("../../configs/solver_convergence.toml"),
    }
}

pub fn preset_config(kind: ExperimentKind) -> ExperimentConfig {
    parse_config(preset_text(kind)).expect("bundled presets are valid")
}

/// Output path: an explicit path wins, then the config's `output_path`,
/// then `<dir>/<experiment>.csv` where `dir` comes from [`OUT_DIR_ENV`] or
/// defaults to `out`.
pub fn resolve_output(cfg: &ExperimentConfig, explicit: Option<&Path>, env_dir: Option<&str>) -> PathBuf {
    if let Some(p) = explicit {
        return p.to_path_buf();
    }
    if let Some(p) = &cfg.output_path {
        return PathBuf::from(p);
    }
    let dir = env_dir.filter(|d| !d.is_empty()).unwrap_or("out");
    Path::new(dir).join(format!("{}.csv", cfg.experiment))
}

/// Runs a config and writes its CSV, returning the rows and the path used.
pub fn run_to_csv(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<ReportRow>> {
    let rows = run_experiment(cfg)?;
    write_csv(&rows, out)?;
    Ok(rows)
}
