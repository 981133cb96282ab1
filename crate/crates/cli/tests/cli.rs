use std::path::PathBuf;
use std::process::{Command, Output};

use serde_json::Value;

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

fn waxkit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_waxkit"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn decompose_args(t: &str) -> Vec<String> {
    let h = fixture("integer_h.json");
    let a = fixture("integer_a.json");
    [
        "decompose",
        "--h",
        h.to_str().unwrap(),
        "--a",
        a.to_str().unwrap(),
        "--m",
        "8",
        "--k",
        "5",
        "--l",
        "2",
        "--t",
        t,
    ]
    .iter()
    .map(|s| s.to_string())
    .collect()
}

#[test]
fn decompose_prints_residual_and_factors() {
    let args = decompose_args("5");
    let out = waxkit(&args.iter().map(String::as_str).collect::<Vec<_>>());
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let text = stdout(&out);
    let mut lines = text.lines();
    let residual: f64 = lines
        .next()
        .unwrap()
        .strip_prefix("residual ")
        .unwrap()
        .parse()
        .unwrap();
    assert!(residual < 1e-10);
    let json: Value = serde_json::from_str(lines.next().unwrap()).unwrap();
    assert_eq!(json["W_blocks"].as_array().unwrap().len(), 4);
    assert_eq!(json["X"]["rows"], 5);
    assert_eq!(json["nullspace_dim"], 1);
}

#[test]
fn decompose_writes_factors_to_a_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("f.json");
    let mut args = decompose_args("5");
    args.extend(["--out".into(), path.to_str().unwrap().into()]);
    let out = waxkit(&args.iter().map(String::as_str).collect::<Vec<_>>());
    assert_eq!(out.status.code(), Some(0));
    let json: Value = serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
    assert!(json["residual"].as_f64().unwrap() < 1e-10);
}

#[test]
fn mismatched_dimensions_exit_with_an_error() {
    let args = decompose_args("6");
    let out = waxkit(&args.iter().map(String::as_str).collect::<Vec<_>>());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("error"));
}

#[test]
fn infeasible_instances_exit_2_with_a_diagnostic() {
    let dir = tempfile::tempdir().unwrap();
    let h = waxkit::sample_gaussian(waxkit::RngSpec::new(1, 0), 24, 5).unwrap();
    let a = waxkit::sample_gaussian(waxkit::RngSpec::new(1, 1), 24, 9).unwrap();
    let (hp, ap) = (dir.path().join("h.json"), dir.path().join("a.json"));
    std::fs::write(&hp, h.to_json()).unwrap();
    std::fs::write(&ap, a.to_json()).unwrap();
    let out = waxkit(&[
        "decompose",
        "--h",
        hp.to_str().unwrap(),
        "--a",
        ap.to_str().unwrap(),
        "--m",
        "24",
        "--k",
        "5",
        "--l",
        "3",
        "--t",
        "9",
    ]);
    assert_eq!(out.status.code(), Some(2));
    let json: Value = serde_json::from_str(stdout(&out).trim()).unwrap();
    assert_eq!(json["status"], "infeasible");
    assert_eq!(json["report"]["reason"], "empty-null-space");
}

#[test]
fn empty_sweep_fails_without_writing() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("out.csv");
    let out = waxkit(&[
        "experiment",
        "rate-curve",
        "--m",
        "12",
        "--k",
        "4",
        "--l",
        "2",
        "--t",
        "7",
        "--sweep",
        "T:5:3",
        "--out",
        path.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(!path.exists());
}

#[test]
fn experiment_reports_its_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bounds.csv");
    let out = waxkit(&[
        "experiment",
        "bound-table",
        "--m",
        "60",
        "--k",
        "7",
        "--l",
        "1",
        "--t",
        "1",
        "--sweep",
        "L:1:7",
        "--out",
        path.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0));
    let json: Value = serde_json::from_str(stdout(&out).trim()).unwrap();
    assert_eq!(json["rows"], 7);
    assert_eq!(json["failed_rows"], 1);
    let csv = std::fs::read_to_string(&path).unwrap();
    assert!(csv.contains("60,7,6,9,6,2,66,"));
    assert!(dir.path().join("bounds.csv.meta.json").exists());
}

#[test]
fn experiment_config_file_is_overridden_by_flags() {
    let dir = tempfile::tempdir().unwrap();
    let out_path = dir.path().join("b.csv");
    let cfg = serde_json::json!({
        "dims": {"m": 60, "k": 3, "l": 2, "n": 2, "t": 21},
        "seed": 1, "trials": 1, "snr_db": 10.0,
        "out_path": out_path,
    });
    let cfg_path = dir.path().join("cfg.json");
    std::fs::write(&cfg_path, cfg.to_string()).unwrap();
    let out = waxkit(&[
        "experiment",
        "bound-table",
        "--config",
        cfg_path.to_str().unwrap(),
        "--k",
        "7",
        "--l",
        "6",
        "--t",
        "9",
    ]);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let csv = std::fs::read_to_string(&out_path).unwrap();
    assert_eq!(csv.lines().nth(1).unwrap(), "60,7,6,9,6,2,66,");
}

#[test]
fn plan_solves_for_the_missing_dimension() {
    let out = waxkit(&["plan", "--k", "3", "--l", "2", "--t", "50"]);
    assert_eq!(out.status.code(), Some(0));
    let json: Value = serde_json::from_str(stdout(&out).trim()).unwrap();
    assert_eq!(json["m_max"], 149);

    let out = waxkit(&["plan", "--k", "5", "--m", "24", "--l", "3"]);
    let json: Value = serde_json::from_str(stdout(&out).trim()).unwrap();
    assert_eq!(json["t_opt"], 10);

    let out = waxkit(&["plan", "--k", "5", "--l", "3", "--t", "4"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn bound_defaults_to_the_smallest_t() {
    let out = waxkit(&["bound", "--m", "60", "--k", "3", "--l", "2"]);
    assert_eq!(out.status.code(), Some(0));
    let json: Value = serde_json::from_str(stdout(&out).trim()).unwrap();
    assert_eq!(json["T"], 21);
    assert_eq!(json["bound"]["min_ones"], 78);
    assert_eq!(json["bound"]["Q"], 2);
}

#[test]
fn validate_uses_exit_codes_for_the_verdict() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("a.json");
    std::fs::write(&path, waxkit::CMatrix::identity(12).to_json()).unwrap();
    let ok = waxkit(&[
        "validate",
        "--a",
        path.to_str().unwrap(),
        "--m",
        "12",
        "--k",
        "4",
        "--l",
        "2",
        "--t",
        "12",
        "--checks",
    ]);
    assert_eq!(
        ok.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&ok.stderr)
    );
    let json: Value = serde_json::from_str(stdout(&ok).trim()).unwrap();
    assert_eq!(json["verdict"]["valid"], true);
    assert_eq!(json["block_rank"]["pass"], true);

    let mut a = waxkit::CMatrix::identity(12);
    a.set(5, 5, 0.0.into());
    std::fs::write(&path, a.to_json()).unwrap();
    let bad = waxkit(&[
        "validate",
        "--a",
        path.to_str().unwrap(),
        "--m",
        "12",
        "--k",
        "4",
        "--l",
        "2",
        "--t",
        "12",
    ]);
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn bad_thread_setting_is_rejected() {
    let out = Command::new(env!("CARGO_BIN_EXE_waxkit"))
        .args(["bound", "--m", "60", "--k", "3", "--l", "2"])
        .env("WAXKIT_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
}
