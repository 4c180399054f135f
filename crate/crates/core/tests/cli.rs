use std::fs;
use std::path::Path;
use std::process::Command;

use genbound::cli::{cmd_check, cmd_render, cmd_sweep, cmd_train, read_series, ExperimentConfig, Fault, SweepAxis, SweepResult, TRACE_HEADER};
use genbound::Error;

const SMOKE: &str = r#"{
    "seed": 5,
    "dataset": { "kind": "synthetic", "n_train": 256, "n_test": 128, "n_probe": 32, "dims": 6, "classes": 3 },
    "model": { "hidden": [8] },
    "train": { "learning_rate": 0.05, "batch_size": 32, "epochs": 2, "clip": 5.0 },
    "noise": { "sigma": 0.005 },
    "bounds": { "pairs": 8 }
}"#;

fn smoke(out: &Path) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::from_json_str(SMOKE).unwrap();
    cfg.out = out.to_path_buf();
    cfg
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_genbound"))
}

#[test]
fn trace_csv_schema() {
    let dir = tempfile::tempdir().unwrap();
    let run = cmd_train(&smoke(dir.path())).unwrap();
    let text = fs::read_to_string(dir.path().join("trace.csv")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], TRACE_HEADER.join(","));
    assert_eq!(lines.len(), 3);
    for line in &lines[1..] {
        assert_eq!(line.split(',').count(), TRACE_HEADER.len());
    }
    assert_eq!(run.summary.epochs, 2);
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["epochs"], 2);
    // gap = test − train, and every bound is |ξ| + its trajectory
    for r in &run.trace.records {
        assert_eq!(r.gap, r.test_loss.map(|t| t - r.train_loss));
        assert_eq!(r.bound_subg_t2pm, Some(r.flatness_t2pm.value.abs() + r.traj_subgaussian));
        assert_eq!(r.bound_subg_t1pm, Some(r.flatness_t1pm.value.abs() + r.traj_subgaussian));
    }
}

#[test]
fn accumulated_columns_never_decrease() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = smoke(dir.path());
    cfg.train.epochs = 6;
    let run = cmd_train(&cfg).unwrap();
    for w in run.trace.records.windows(2) {
        assert!(w[1].traj_subgaussian >= w[0].traj_subgaussian);
        assert!(w[1].traj_bounded >= w[0].traj_bounded);
        assert!(w[1].traj_clipped >= w[0].traj_clipped);
        assert!(w[1].traj_clipped_bounded >= w[0].traj_clipped_bounded);
    }
}

#[test]
fn repeated_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    cmd_train(&smoke(&dir.path().join("a"))).unwrap();
    cmd_train(&smoke(&dir.path().join("b"))).unwrap();
    for f in ["trace.csv", "summary.json"] {
        assert_eq!(fs::read(dir.path().join("a").join(f)).unwrap(), fs::read(dir.path().join("b").join(f)).unwrap());
    }
}

#[test]
fn thread_count_does_not_change_output() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("cfg.json");
    fs::write(&cfg_path, SMOKE).unwrap();
    for threads in ["1", "3"] {
        let status = bin()
            .env("GENBOUND_THREADS", threads)
            .arg("--config")
            .arg(&cfg_path)
            .arg("--out")
            .arg(dir.path().join(threads))
            .arg("train")
            .output()
            .unwrap();
        assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
    }
    assert_eq!(
        fs::read(dir.path().join("1/trace.csv")).unwrap(),
        fs::read(dir.path().join("3/trace.csv")).unwrap()
    );
}

#[test]
fn render_draws_one_polyline_per_column() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("t.csv");
    fs::write(&csv, "epoch,a,b\n1,0.5,\n2,0.25,3\n").unwrap();
    let cols = vec!["a".to_string()];
    let svg_path = dir.path().join("a.svg");
    cmd_render(&csv, &cols, &svg_path).unwrap();
    let svg = fs::read_to_string(&svg_path).unwrap();
    assert_eq!(svg.matches("<polyline").count(), 1);
    let points = svg.split("points=\"").nth(1).unwrap().split('"').next().unwrap();
    assert_eq!(points.split(' ').count(), 2);

    let again = dir.path().join("again.svg");
    cmd_render(&csv, &cols, &again).unwrap();
    assert_eq!(fs::read(&svg_path).unwrap(), fs::read(&again).unwrap());

    // the empty cell is skipped
    let series = read_series(&csv, &["b".to_string()]).unwrap();
    assert_eq!(series[0], vec![(2.0, 3.0)]);

    match cmd_render(&csv, &["missing".to_string()], &svg_path) {
        Err(Error::MissingColumn(c)) => assert_eq!(c, "missing"),
        other => panic!("expected a missing-column error, got {other:?}"),
    }
}

#[test]
fn sweep_needs_two_values() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = smoke(dir.path());
    assert!(matches!(cmd_sweep(&cfg, SweepAxis::Width, &[8.0]), Err(Error::Config(_))));
}

#[test]
fn analytic_n_sweep() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = smoke(dir.path());
    let res = cmd_sweep(&cfg, SweepAxis::N, &[100.0, 1000.0, 10000.0, 100000.0]).unwrap();
    let SweepResult::Rate(r) = res else { panic!("n axis should run the analytic model") };
    assert!((r.slope + 2.0 / 3.0).abs() < 0.05);
    let text = fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    assert_eq!(text.lines().count(), 5);
}

#[test]
fn width_sweep_trains_each_value() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = smoke(dir.path());
    let SweepResult::Trained(rows) = cmd_sweep(&cfg, SweepAxis::Width, &[4.0, 16.0]).unwrap() else {
        panic!("width axis trains")
    };
    assert_eq!(rows.len(), 2);
    assert!(dir.path().join("width_4/trace.csv").exists());
    assert!(dir.path().join("width_16/trace.csv").exists());
    assert_eq!(fs::read_to_string(dir.path().join("sweep.csv")).unwrap().lines().count(), 3);
}

#[test]
fn property_suite_and_negative_control() {
    let report = cmd_check(None);
    assert!(report.results.len() >= 10);
    assert!(report.all_passed(), "{report}");
    let faulty = cmd_check(Some(Fault::DeltaSign));
    assert!(!faulty.all_passed());
    let failed: Vec<&str> = faulty.results.iter().filter(|r| !r.passed).map(|r| r.name).collect();
    assert!(failed.contains(&"delta_within_step_size"), "{failed:?}");
}

#[test]
fn config_rejects_unknown_and_conflicting_keys() {
    assert!(matches!(ExperimentConfig::from_json_str(r#"{ "sed": 1 }"#), Err(Error::Config(_))));
    let both = r#"{ "noise": { "sigma": 0.1, "sigma_per_step": [0.1] } }"#;
    let cfg = ExperimentConfig::from_json_str(both);
    assert!(cfg.is_err() || matches!(cfg.unwrap().validate(), Err(Error::Config(_))));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    fs::write(&bad, r#"{ "unknown_key": true }"#).unwrap();
    assert_eq!(bin().arg("--config").arg(&bad).arg("train").status().unwrap().code(), Some(1));

    let missing_data = dir.path().join("nodata.json");
    fs::write(&missing_data, r#"{ "dataset": { "kind": "mnist", "dir": "/nonexistent/mnist" } }"#).unwrap();
    let out = dir.path().join("out");
    let code = bin().arg("--config").arg(&missing_data).arg("--out").arg(&out).arg("train").status().unwrap().code();
    assert_eq!(code, Some(2));

    let check = bin().args(["check", "--inject-fault", "delta-sign"]).output().unwrap();
    assert_eq!(check.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&check.stdout).contains("delta_within_step_size"));
}
