use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn dsse(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dsse"))
        .args(args)
        .output()
        .expect("spawn dsse")
}

fn scenario(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name)
}

fn path_str(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}

#[test]
fn run_writes_every_output_for_a_short_two_bus_scenario() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let result = dsse(&[
        "run",
        "--scenario",
        path_str(&scenario("two_bus_smoke.json")),
        "--out-dir",
        path_str(&out),
        "--log-states",
        "--dump-measurements",
    ]);
    assert!(result.status.success(), "{}", String::from_utf8_lossy(&result.stderr));
    for file in [
        "trace.csv",
        "summary.csv",
        "timing.csv",
        "running_error.csv",
        "states.csv",
        "measurements.csv",
    ] {
        assert!(out.join(file).is_file(), "{file} missing");
    }
    let trace = fs::read_to_string(out.join("trace.csv")).unwrap();
    let mut lines = trace.lines();
    assert_eq!(lines.next(), Some("t,node,v_true,v_est_gn,v_est_go,v_est_gd,v_est_sgd"));
    assert_eq!(lines.count(), 10);
    let summary = fs::read_to_string(out.join("summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 5);
}

#[test]
fn estimate_batch_reads_dumped_measurements() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let run = dsse(&[
        "run",
        "--scenario",
        path_str(&scenario("two_bus_smoke.json")),
        "--out-dir",
        path_str(&out),
        "--dump-measurements",
    ]);
    assert!(run.status.success());
    let measurements = out.join("measurements.csv");
    let mut estimates = Vec::new();
    for algorithm in ["gn", "go"] {
        let result = dsse(&[
            "estimate-batch",
            "--feeder",
            "builtin:2bus",
            "--measurements",
            path_str(&measurements),
            "--algorithm",
            algorithm,
            "--t",
            "5",
        ]);
        assert!(result.status.success(), "{}", String::from_utf8_lossy(&result.stderr));
        let stdout = String::from_utf8(result.stdout).unwrap();
        let row = stdout.lines().nth(1).unwrap().to_string();
        let v: f64 = row.split(',').nth(1).unwrap().parse().unwrap();
        estimates.push(v);
    }
    assert!((estimates[0] - estimates[1]).abs() < 1e-6);
}

#[test]
fn powerflow_without_injections_prints_the_slack_voltages() {
    let result = dsse(&["powerflow", "--feeder", "builtin:4bus"]);
    assert!(result.status.success());
    let stdout = String::from_utf8(result.stdout).unwrap();
    let mut lines = stdout.lines();
    assert_eq!(lines.next(), Some("node,v_mag_pu,v_angle_deg"));
    let rows: Vec<Vec<f64>> = lines
        .map(|l| l.split(',').skip(1).map(|x| x.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 9);
    let nominal = [0.0, -120.0, 120.0];
    for (i, row) in rows.iter().enumerate() {
        assert!((row[0] - 1.0).abs() < 1e-12);
        assert!((row[1] - nominal[i % 3]).abs() < 1e-9);
    }
}

#[test]
fn powerflow_reads_injections_from_json() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("s.json");
    fs::write(
        &file,
        r#"{ "loads": [ { "bus": 1, "phase": "a", "p": 0.5, "q": 0.2 } ] }"#,
    )
    .unwrap();
    let result = dsse(&["powerflow", "--feeder", "builtin:2bus", "--injections", path_str(&file)]);
    assert!(result.status.success(), "{}", String::from_utf8_lossy(&result.stderr));
    let stdout = String::from_utf8(result.stdout).unwrap();
    let v: f64 = stdout
        .lines()
        .nth(1)
        .unwrap()
        .split(',')
        .nth(1)
        .unwrap()
        .parse()
        .unwrap();
    assert!(v < 1.0 && v > 0.9);
}

#[test]
fn gen_feeder_round_trips_through_powerflow() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("f.json");
    let result = dsse(&["gen-feeder", "--template", "13node", "--out", path_str(&file)]);
    assert!(result.status.success());
    let from_file = dsse(&["powerflow", "--feeder", path_str(&file)]);
    let builtin = dsse(&["powerflow", "--feeder", "builtin:13node"]);
    assert!(from_file.status.success());
    assert_eq!(from_file.stdout, builtin.stdout);
}

#[test]
fn verify_bound_holds_on_the_static_scenario() {
    let result = dsse(&[
        "verify-bound",
        "--scenario",
        path_str(&scenario("ieee13_static_bound.json")),
        "--seeds",
        "20",
    ]);
    assert_eq!(
        result.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&result.stdout)
    );
    let stdout = String::from_utf8(result.stdout).unwrap();
    assert!(stdout.contains("bound = "));
    assert!(stdout.contains("steady-state mse = "));
}

#[test]
fn exit_codes_distinguish_usage_and_runtime_errors() {
    assert_eq!(dsse(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(dsse(&["run", "--scenario"]).status.code(), Some(1));
    assert_eq!(dsse(&["--help"]).status.code(), Some(0));
    let missing = dsse(&["run", "--scenario", "does-not-exist.json", "--out-dir", "unused"]);
    assert_eq!(missing.status.code(), Some(2));
    assert_eq!(dsse(&["powerflow", "--feeder", "builtin:nope"]).status.code(), Some(2));
}
