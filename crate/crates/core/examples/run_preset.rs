//! Runs a built-in preset through the harness and writes its CSV.
//!
//! cargo run --release --example run_preset -- [preset] [out.csv]

use diffcomm::harness::{preset_config, run_to_csv, ExperimentKind};

fn main() -> diffcomm::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let kind: ExperimentKind = args.get(1).map(|s| s.parse()).transpose()?.unwrap_or(ExperimentKind::SolverConvergence);
    let out = args.get(2).cloned().unwrap_or_else(|| format!("{}.csv", kind.name()));
    let mut cfg = preset_config(kind);
    cfg.seeds.truncate(2);
    println!("{}: {}", kind.name(), kind.description());
    let rows = run_to_csv(&cfg, out.as_ref())?;
    println!("{} rows -> {out}", rows.len());
    Ok(())
}
