use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_bdy-cheat"))
}

fn run(args: &[&str], out: &Path) -> Output {
    bin().args(args).arg("--out").arg(out).output().expect("binary runs")
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn equilibrium_defaults_and_pure_honest() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["equilibrium"], dir.path());
    assert!(o.status.success());
    let s = json(&dir.path().join("summary.json"));
    assert!((s["r_bar"].as_f64().unwrap() - 0.450875).abs() < 1e-5);
    assert!(dir.path().join("pmfs.csv").exists());

    let o = run(&["equilibrium", "--n-h", "1", "--gamma", "0.3"], dir.path());
    assert!(o.status.success());
    let s = json(&dir.path().join("summary.json"));
    assert!((s["r_bar"].as_f64().unwrap() - 5.0 / 6.0).abs() < 1e-12);
    assert!(s["mean_cheater"].is_null());
}

#[test]
fn out_of_range_gamma_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["equilibrium", "--gamma", "1.2"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("gamma"));
}

#[test]
fn heavy_tail_is_a_numeric_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["equilibrium", "--n-max", "20"], dir.path());
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn flags_override_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    fs::write(&cfg, r#"{"model": {"mu": 3.0, "gamma": 0.2}, "format": "json"}"#).unwrap();
    let o = bin()
        .args(["equilibrium", "--gamma", "0.4", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let s = json(&dir.path().join("summary.json"));
    assert_eq!(s["params"]["mu"], 3.0);
    assert_eq!(s["params"]["gamma"], 0.4);
    assert!(dir.path().join("pmfs.json").exists());
}

#[test]
fn malformed_config_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    fs::write(&cfg, r#"{"model": {"n_c": 0.5}}"#).unwrap();
    let o = bin().args(["equilibrium", "--config"]).arg(&cfg).arg("--out").arg(dir.path()).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn abm_reruns_are_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let args = ["abm", "--n-agents", "100", "--t-end", "50", "--record-times", "0,25,50", "--seed", "4"];
    assert!(run(&args, a.path()).status.success());
    assert!(run(&args, b.path()).status.success());
    for f in ["snapshots.csv", "comparison.csv", "metadata.json"] {
        assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap(), "{f}");
    }
    let meta = json(&a.path().join("metadata.json"));
    assert_eq!(meta["seed"], 4);
}

#[test]
fn abm_without_record_times_writes_metadata_only() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["abm", "--n-agents", "50", "--t-end", "5", "--record-times"], dir.path());
    assert!(o.status.success());
    let names: Vec<_> = fs::read_dir(dir.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert_eq!(names, vec![std::ffi::OsString::from("metadata.json")]);
}

#[test]
fn abm_rejects_fractional_honest_split() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["abm", "--n-agents", "3", "--t-end", "1"], dir.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn ode_zero_horizon_echoes_the_initial_state() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["ode", "--t-end", "0", "--n-max", "50"], dir.path());
    assert!(o.status.success());
    let traj = fs::read_to_string(dir.path().join("trajectory.csv")).unwrap();
    assert!(traj.lines().any(|l| l == "0,h,5,1"));
    assert!(traj.lines().skip(1).all(|l| l.starts_with("0,")));
    let s = json(&dir.path().join("summary.json"));
    assert_eq!(s["steps"], 0);
}

#[test]
fn ode_writes_trace_and_trajectory() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["ode", "--t-end", "5", "--snapshot-every", "100", "--h-every", "50"], dir.path());
    assert!(o.status.success());
    let h = fs::read_to_string(dir.path().join("h_trace.csv")).unwrap();
    assert_eq!(h.lines().next().unwrap(), "time,H,H_equilibrium_minus_H,production_rate");
    // Rows at steps 0, 50, ..., 500.
    assert_eq!(h.lines().count(), 1 + 11);
    let traj = fs::read_to_string(dir.path().join("trajectory.csv")).unwrap();
    assert!(traj.lines().any(|l| l.starts_with("5,mix,")));
}

#[test]
fn gini_sweep_grids() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["gini-sweep"], dir.path());
    assert!(o.status.success());
    let report = json(&dir.path().join("monotonicity.json"));
    let arr = report.as_array().unwrap();
    assert_eq!(arr.len(), 8);
    assert!(arr.iter().all(|r| r["adjacent_decreases"] == 0));

    let o = run(&["gini-sweep", "--mu", "5", "--n-h", "0.3", "--gamma-grid", "0"], dir.path());
    assert!(o.status.success());
    let csv = fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    let row: Vec<f64> = csv.lines().nth(1).unwrap().split(',').map(|x| x.parse().unwrap()).collect();
    assert!((row[4] - 6.0 / 11.0).abs() < 1e-12);

    let o = run(&["gini-sweep", "--gamma-grid"], dir.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn linearized_traces() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["linearized", "--t-end", "5", "--samples", "3"], dir.path());
    assert!(o.status.success());
    let s = json(&dir.path().join("summary.json"));
    assert_eq!(s["monotone"], true);
    assert!(s["max_relative_residual"].as_f64().unwrap() < 1e-6);

    let o = run(&["linearized", "--zero", "--t-end", "1"], dir.path());
    assert!(o.status.success());
    let energy = fs::read_to_string(dir.path().join("energy.csv")).unwrap();
    assert!(energy.lines().skip(1).all(|l| l.split(',').nth(2) == Some("0")));
}
