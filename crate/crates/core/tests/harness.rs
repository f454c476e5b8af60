use std::path::Path;
use std::process::Command;

use diffcomm::harness::{
    format_f64, parse_config, preset_config, preset_text, render_csv, resolve_output, run_experiment, write_csv,
    ExperimentConfig, ExperimentKind, ReportRow, OUT_DIR_ENV,
};

/// The preset shrunk to a few seconds of work.
fn small(kind: ExperimentKind) -> ExperimentConfig {
    let mut cfg = preset_config(kind);
    cfg.seeds.truncate(1);
    cfg.run.samples = cfg.run.samples.min(16);
    cfg.run.train_steps = 20;
    cfg.run.langevin_steps = 20;
    cfg.run.reference_steps = 200;
    cfg.run.grid = 21;
    if kind == ExperimentKind::SamplerFidelity {
        cfg.sweep.steps = vec![20];
    }
    cfg
}

fn header(rows: &[ReportRow]) -> String {
    render_csv(rows).unwrap().lines().next().unwrap().to_string()
}

#[test]
fn csv_schema_matches_golden_headers() {
    for kind in ExperimentKind::ALL {
        let rows = run_experiment(&small(kind)).unwrap();
        let golden = std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join(format!("tests/golden/{}.csv", kind.name())))
            .unwrap();
        assert_eq!(header(&rows), golden.trim_end(), "{kind}");
        assert!(rows.iter().all(|r| r.columns() == rows[0].columns()));
    }
}

#[test]
fn runtime_column_is_appended() {
    let mut cfg = small(ExperimentKind::SolverConvergence);
    cfg.run.report_runtime = true;
    let rows = run_experiment(&cfg).unwrap();
    assert_eq!(header(&rows), "experiment,seed,method,steps,reference_steps,endpoint_err,runtime_ms");
}

#[test]
fn sweep_rows_follow_cross_product() {
    let mut cfg = small(ExperimentKind::DiffcomSweep);
    cfg.seeds = vec![0, 1, 2];
    let rows = run_experiment(&cfg).unwrap();
    assert_eq!(rows.len(), 15);
    let order: Vec<(String, String)> = rows.iter().map(|r| (r.get("snr_db").unwrap().render(), r.get("seed").unwrap().render())).collect();
    assert_eq!(order[0], ("0".into(), "0".into()));
    assert_eq!(order[2], ("0".into(), "2".into()));
    assert_eq!(order[3], ("5".into(), "0".into()));
    assert_eq!(order[14], ("20".into(), "2".into()));
}

#[test]
fn repeated_runs_are_byte_identical() {
    for kind in [ExperimentKind::DiffcomSweep, ExperimentKind::SamplerFidelity, ExperimentKind::BlindGain] {
        let cfg = small(kind);
        let a = render_csv(&run_experiment(&cfg).unwrap()).unwrap();
        let b = render_csv(&run_experiment(&cfg).unwrap()).unwrap();
        assert_eq!(a, b, "{kind}");
    }
}

#[test]
fn seeds_change_results() {
    let mut cfg = small(ExperimentKind::SolverConvergence);
    cfg.seeds = vec![0, 1];
    let rows = run_experiment(&cfg).unwrap();
    assert_ne!(rows[0].get("endpoint_err"), rows[1].get("endpoint_err"));
}

#[test]
fn csv_writer_examples() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("one.csv");
    let rows = vec![ReportRow::new().with("experiment", "x").with("value", f64::INFINITY)];
    write_csv(&rows, &path).unwrap();
    let first = std::fs::read(&path).unwrap();
    assert_eq!(String::from_utf8(first.clone()).unwrap(), "experiment,value\nx,inf\n");
    write_csv(&rows, &path).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), first);

    let bad = vec![ReportRow::new().with("a", 1.0), ReportRow::new().with("b", 1.0)];
    assert!(render_csv(&bad).is_err());
    assert!(render_csv(&[]).is_err());
    assert_eq!(format_f64(0.1), "0.10000000000000001");
    assert_eq!(format_f64(f64::NEG_INFINITY), "-inf");
}

#[test]
fn presets_round_trip_through_canonical_form() {
    for kind in ExperimentKind::ALL {
        let cfg = parse_config(preset_text(kind)).unwrap();
        assert_eq!(cfg.experiment, kind);
        let canonical = cfg.to_toml();
        let again = parse_config(&canonical).unwrap();
        assert_eq!(again, cfg);
        assert_eq!(again.to_toml(), canonical);
    }
}

#[test]
fn config_errors_name_the_problem() {
    let base = "experiment = \"dps_conjugate\"\nseeds = [1]\n\n[source]\nweights = [1.0]\nmeans = [[0.0]]\ncov_diag = [[1.0]]\n";
    assert!(parse_config(base).is_ok());

    let typo = format!("{base}\n[decoder]\ngamm = 2.0\n");
    let msg = parse_config(&typo).unwrap_err().to_string();
    assert!(msg.contains("gamm"), "{msg}");

    let bad_type = format!("{base}\n[run]\nsnr_db = \"abc\"\n");
    let msg = parse_config(&bad_type).unwrap_err().to_string();
    assert!(msg.contains("snr_db") && msg.contains("line 10"), "{msg}");

    let msg = parse_config(&base.replace("[1]", "[]")).unwrap_err().to_string();
    assert!(msg.contains("seeds"), "{msg}");
    assert!(parse_config(&base.replace("dps_conjugate", "dps")).is_err());
    assert!(parse_config("experiment = ").is_err());
    assert!(parse_config(&base.replace("weights = [1.0]", "weights = [-1.0]")).is_err());
}

#[test]
fn output_resolution_order() {
    let mut cfg = small(ExperimentKind::DiffcomSweep);
    assert_eq!(resolve_output(&cfg, None, None), Path::new("out/diffcom_sweep.csv"));
    assert_eq!(resolve_output(&cfg, None, Some("/tmp/r")), Path::new("/tmp/r/diffcom_sweep.csv"));
    cfg.output_path = Some("mine.csv".into());
    assert_eq!(resolve_output(&cfg, None, Some("/tmp/r")), Path::new("mine.csv"));
    assert_eq!(resolve_output(&cfg, Some(Path::new("x.csv")), Some("/tmp/r")), Path::new("x.csv"));
}

fn cli() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_diffcomm"));
    c.env_remove(OUT_DIR_ENV);
    c
}

#[test]
fn cli_presets_validate_and_run() {
    let out = cli().arg("presets").output().unwrap();
    let listing = String::from_utf8(out.stdout).unwrap();
    assert!(out.status.success());
    for kind in ExperimentKind::ALL {
        assert!(listing.contains(kind.name()));
    }

    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("sweep.toml");
    std::fs::write(&cfg_path, small(ExperimentKind::DiffcomSweep).to_toml()).unwrap();
    let out = cli().arg("validate").arg(&cfg_path).output().unwrap();
    assert!(out.status.success());
    assert!(String::from_utf8(out.stdout).unwrap().contains("experiment = \"diffcom_sweep\""));

    let csv = dir.path().join("o.csv");
    let out = cli().args(["run", "--seed-override", "7", "--out"]).arg(&csv).arg(&cfg_path).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(&csv).unwrap();
    assert_eq!(text.lines().count(), 6);
    assert!(text.lines().skip(1).all(|l| l.starts_with("diffcom_sweep,7,")));

    let env_dir = dir.path().join("env");
    let out = cli().arg("run").arg(&cfg_path).env(OUT_DIR_ENV, &env_dir).output().unwrap();
    assert!(out.status.success());
    assert!(env_dir.join("diffcom_sweep.csv").exists());

    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "experiment = \"diffcom_sweep\"\nseeds = [0]\nsed = 1\n").unwrap();
    let out = cli().arg("validate").arg(&bad).output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8(out.stderr).unwrap().contains("sed"));
}
