use std::path::Path;
use std::process::{Command, Output};

fn zeroone(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_zeroone")).args(args).output().unwrap()
}

fn write_preset(dir: &Path, algorithm: &str, steps: &str) -> String {
    let out = zeroone(&["preset", algorithm, "--workers", "2", "--dim", "6", "--steps", steps]);
    assert!(out.status.success());
    let path = dir.join(format!("{algorithm}.toml"));
    std::fs::write(&path, &out.stdout).unwrap();
    path.to_str().unwrap().to_owned()
}

#[test]
fn run_writes_metrics_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_preset(dir.path(), "zeroone-adam", "120");
    let out_dir = dir.path().join("out");
    let out = zeroone(&["run", "--config", &config, "--out", out_dir.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let summary: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(summary["algorithm"], "zeroone_adam");
    assert_eq!(summary["volume_delta_bits"], 0);
    assert_eq!(summary["steps"], 120);

    let csv = std::fs::read_to_string(out_dir.join("metrics.csv")).unwrap();
    assert!(csv.starts_with("step,loss,grad_norm_sq,bits_per_param,rounds_full,rounds_onebit,lr,synced,var_updated\n"));
    assert_eq!(csv.lines().count(), 121);
    assert!(out_dir.join("summary.json").exists());
}

#[test]
fn output_dir_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_preset(dir.path(), "onebit-adam", "40");
    let out_dir = dir.path().join("from-env");
    let out = Command::new(env!("CARGO_BIN_EXE_zeroone"))
        .args(["run", "--config", &config])
        .env("ZEROONE_OUT_DIR", &out_dir)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(out_dir.join("metrics.csv").exists());
}

#[test]
fn verify_exit_code_follows_checks() {
    let out = zeroone(&["verify", "--suite", "compression", "--suite", "collectives"]);
    assert!(out.status.success());
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["passed"], true);
    let checks = report["checks"].as_array().unwrap();
    assert!(checks.iter().any(|c| c["name"] == "telescoping"));
    assert!(checks.iter().all(|c| c["margin"].as_f64().unwrap() >= 0.0));

    // The as-written 0/1 Adam momentum does not reduce to distributed Adam.
    let out = zeroone(&["verify", "--suite", "equivalence"]);
    assert!(!out.status.success());
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let failing: Vec<_> =
        report["checks"].as_array().unwrap().iter().filter(|c| c["passed"] == false).map(|c| c["name"].clone()).collect();
    assert_eq!(failing, vec![serde_json::json!("zeroone_vs_distributed_adam")]);
}

#[test]
fn schedule_preview_reports_sets_and_volume() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_preset(dir.path(), "zeroone-adam", "200");
    let out = zeroone(&["schedule", "preview", "--config", &config]);
    assert!(out.status.success());
    let preview: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let t_u = preview["t_u"].as_array().unwrap();
    let t_v = preview["t_v"].as_array().unwrap();
    assert_eq!(t_u[0], 0);
    assert!(preview["max_sync_gap"].as_u64().unwrap() <= 16);
    assert_eq!(preview["predicted"]["rounds"].as_u64().unwrap(), (t_u.len() + t_v.len()) as u64);
}

#[test]
fn bad_config_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    std::fs::write(&path, "seed = 1\n[algorithm]\nkind = \"sgd\"\n").unwrap();
    let out = zeroone(&["run", "--config", path.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("error"));

    let missing = zeroone(&["schedule", "preview", "--config", "/nonexistent/run.toml"]);
    assert!(!missing.status.success());
}
