use std::path::Path;
use std::process::{Command, Output};

fn bin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_attn-margin")).args(args).output().expect("binary runs")
}

fn write_dataset(dir: &Path) -> String {
    // Single input, tokens (0,0), (1,0), (-0.1,1); select the last one.
    let path = dir.join("data.json");
    std::fs::write(&path, r#"{"d": 2, "inputs": [{"X": [[0.0, 0.0], [1.0, 0.0], [-0.1, 1.0]], "Y": 1.0}]}"#).unwrap();
    path.to_string_lossy().into_owned()
}

#[test]
fn solve_svm_prints_solution_json() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_dataset(dir.path());
    let out = bin(&["solve-svm", "--dataset", &data, "--alpha", "2"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["status"], "optimal");
    let p: Vec<f64> = serde_json::from_value(v["solution"].clone()).unwrap();
    assert!((p[0] + 0.09901).abs() < 1e-4 && (p[1] - 0.99010).abs() < 1e-4, "{p:?}");
    for key in ["norm", "margin", "active", "duals"] {
        assert!(v.get(key).is_some(), "missing {key}");
    }
    assert_eq!(v["active"], serde_json::json!([{"i": 0, "t": 0}]));
}

#[test]
fn solve_svm_infeasible_exits_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("dup.json");
    std::fs::write(&data, r#"{"d": 1, "inputs": [{"X": [[1.0], [1.0]], "Y": 1.0}]}"#).unwrap();
    let out = bin(&["solve-svm", "--dataset", data.to_str().unwrap(), "--alpha", "0"]);
    assert_eq!(out.status.code(), Some(1));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["status"], "infeasible");
}

#[test]
fn bad_alpha_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_dataset(dir.path());
    let out = bin(&["solve-svm", "--dataset", &data, "--alpha", "7"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("out of range"));
}

#[test]
fn run_writes_summary_and_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("out");
    let out = bin(&["run", "lemma2_equivalence", "--out", out_dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    let summary: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out_dir.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["passed"], true);
    assert!(out_dir.join("lemma2.csv").exists());
}

#[test]
fn run_with_config_and_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"scenario": "fig4_census", "dims": [2, 4], "seed": 3}"#).unwrap();
    let out_dir = dir.path().join("census");
    let out = bin(&["run", "fig4_census", "--config", cfg.to_str().unwrap(), "--out", out_dir.to_str().unwrap(), "--trials", "4", "--jobs", "2", "--seed", "11"]);
    assert!(out.status.code() == Some(0) || out.status.code() == Some(1));
    let csv = std::fs::read_to_string(out_dir.join("census.csv")).unwrap();
    assert!(csv.starts_with("d,trial,saturated,lmm_match,gmm_match,corr,score_gap\n"));
    assert_eq!(csv.lines().count(), 1 + 2 * 4);
    let summary: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out_dir.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["passed"].as_bool().unwrap(), out.status.code() == Some(0));
}

#[test]
fn scenario_mismatch_and_unknown_scenario_fail() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"scenario": "fig1_global"}"#).unwrap();
    let out = bin(&["run", "fig1_local", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let out = bin(&["run", "fig9", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown scenario"));
}

#[test]
fn check_subset_runs() {
    let out = bin(&["check", "--only", "1,5"]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8_lossy(&out.stdout);
    assert_eq!(text.lines().count(), 2);
    assert!(text.lines().all(|l| l.contains("PASS")));
}
