//! End-to-end runs of the `bpre-lab` binary.

use std::path::PathBuf;
use std::process::{Command, Output};

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

fn lab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bpre-lab"))
        .args(args)
        .env_remove("BPRE_LAB_THREADS")
        .output()
        .expect("binary runs")
}

fn golden() -> String {
    fixture("golden.toml").display().to_string()
}

#[test]
fn golden_fixture_is_the_shared_golden_environment() {
    let text = std::fs::read_to_string(fixture("golden.toml")).unwrap();
    assert_eq!(text, bpre_core::acceptance::GOLDEN_SCENARIO_TOML);
    let sc = bpre_core::scenario::Scenario::from_toml_str(&text).unwrap();
    assert_eq!(sc.env, bpre_core::acceptance::golden_environment());
}

#[test]
fn criteria_reports_critical_alpha() {
    let out = lab(&["criteria", "--config", &golden()]);
    assert_eq!(out.status.code(), Some(0));
    let doc: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let alpha = doc["result"]["critical_alpha"]["value"].as_f64().unwrap();
    assert!((alpha - 1.6945).abs() < 5e-4, "{alpha}");
    assert_eq!(doc["meta"]["seed"], 20240611);
    assert_eq!(doc["meta"]["scenario_sha256"].as_str().unwrap().len(), 64);
}

#[test]
fn simulate_is_byte_identical_across_runs_and_threads() {
    let g = golden();
    let a = lab(&["simulate", "--config", &g, "--seed", "7"]);
    let b = lab(&["simulate", "--config", &g, "--seed", "7"]);
    let c = lab(&["simulate", "--config", &g, "--seed", "7", "--threads", "8"]);
    let d = lab(&["simulate", "--config", &g, "--seed", "7", "--threads", "1"]);
    assert_eq!(a.status.code(), Some(0));
    assert!(!a.stdout.is_empty());
    assert_eq!(a.stdout, b.stdout);
    assert_eq!(a.stdout, c.stdout);
    assert_eq!(a.stdout, d.stdout);
    let text = String::from_utf8(a.stdout).unwrap();
    let mut lines = text.lines();
    assert!(lines.next().unwrap().contains("seed=7"));
    assert_eq!(lines.next().unwrap(), "traj_id,n,Z_or_logZ,logPi,W,Wstar,extinct");
    assert_eq!(lines.count(), 200 * 21);
}

#[test]
fn threads_from_environment_variable() {
    let g = golden();
    let plain = lab(&["simulate", "--config", &g]);
    let env = Command::new(env!("CARGO_BIN_EXE_bpre-lab"))
        .args(["simulate", "--config", &g])
        .env("BPRE_LAB_THREADS", "3")
        .output()
        .unwrap();
    assert_eq!(plain.stdout, env.stdout);
}

#[test]
fn seed_changes_output() {
    let g = golden();
    assert_ne!(
        lab(&["simulate", "--config", &g, "--seed", "1"]).stdout,
        lab(&["simulate", "--config", &g, "--seed", "2"]).stdout
    );
}

#[test]
fn weights_not_summing_to_one_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    let text = bpre_core::acceptance::GOLDEN_SCENARIO_TOML.replacen("weight = 0.5", "weight = 0.4", 1);
    std::fs::write(&path, text).unwrap();
    let out = lab(&["criteria", "--config", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("sum"));
}

#[test]
fn unknown_key_and_missing_config_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("typo.toml");
    std::fs::write(&path, format!("{}\n[tail]\nwindoww = 3\n", bpre_core::acceptance::GOLDEN_SCENARIO_TOML)).unwrap();
    let out = lab(&["criteria", "--config", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("windoww"));
    assert_eq!(lab(&["criteria"]).status.code(), Some(2));
    assert_eq!(lab(&["criteria", "--config", "/nonexistent/x.toml"]).status.code(), Some(2));
    assert_eq!(lab(&["moments", "--config", &golden(), "--format", "csv"]).status.code(), Some(2));
}

#[test]
fn json_scenarios_share_the_toml_hash() {
    let dir = tempfile::tempdir().unwrap();
    let sc = bpre_core::scenario::Scenario::from_toml_str(bpre_core::acceptance::GOLDEN_SCENARIO_TOML).unwrap();
    let path = dir.path().join("golden.json");
    std::fs::write(&path, serde_json::to_string(&sc).unwrap()).unwrap();
    let a = lab(&["criteria", "--config", &golden()]);
    let b = lab(&["criteria", "--config", path.to_str().unwrap()]);
    assert_eq!(a.stdout, b.stdout);
}

#[test]
fn out_directory_receives_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    for (cmd, file) in
        [("simulate", "simulate.csv"), ("moments", "moments.json"), ("tail", "tail.json"), ("fncheck", "fncheck.json")]
    {
        let out = lab(&[cmd, "--config", &golden(), "--out", d]);
        assert_eq!(out.status.code(), Some(0), "{cmd}: {}", String::from_utf8_lossy(&out.stderr));
        assert!(dir.path().join(file).exists(), "{file}");
    }
    let moments: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("moments.json")).unwrap()).unwrap();
    assert_eq!(moments["result"]["comparison"]["agreement"], true);
    let json = lab(&["simulate", "--config", &golden(), "--format", "json", "--out", d]);
    assert_eq!(json.status.code(), Some(0));
    let doc: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("simulate.json")).unwrap()).unwrap();
    assert_eq!(doc["result"].as_array().unwrap().len(), 200);
}

#[test]
fn run_dispatches_on_scenario_experiment() {
    let g = golden();
    assert_eq!(lab(&["run", "--config", &g]).stdout, lab(&["simulate", "--config", &g]).stdout);
}

#[test]
fn verify_exit_codes() {
    let ok = lab(&["verify", "--criterion", "1", "--criterion", "8"]);
    assert_eq!(ok.status.code(), Some(0));
    let text = String::from_utf8(ok.stdout).unwrap();
    assert!(text.contains("PASS criterion  1") && text.contains("2/2 criteria passed"));
    // the large-deviation criterion is not met by the golden environment
    let failing = lab(&["verify", "--criterion", "9"]);
    assert_eq!(failing.status.code(), Some(3));
    assert!(String::from_utf8(failing.stdout).unwrap().starts_with("FAIL criterion  9"));
    assert_eq!(lab(&["verify", "--criterion", "12"]).status.code(), Some(2));
}
