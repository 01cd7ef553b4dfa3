use std::path::Path;
use std::process::{Command, Output};

fn asp_rl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_asp-rl"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn config_path() -> String {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../configs/airplane_experiment.json")
        .display()
        .to_string()
}

#[test]
fn enumerate_writes_all_sequences() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = asp_rl(&["enumerate", "--spec", "builtin:airplane", "--out", out]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).starts_with("3360 sequences"));

    let stats: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("stats.json")).unwrap()).unwrap();
    assert_eq!(stats["count"], 3360);
    let rows = std::fs::read_to_string(dir.path().join("sequences.csv")).unwrap();
    // Header plus one line per sequence and convention.
    assert_eq!(rows.lines().count(), 1 + 2 * 3360);
    assert!(dir.path().join("histogram.csv").exists());
}

#[test]
fn validate_accepts_shipped_spec() {
    let spec = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/airplane_spec.json");
    let o = asp_rl(&["validate", "--spec", spec.to_str().unwrap()]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("3360 feasible sequences"));
}

#[test]
fn validate_rejects_missing_file() {
    let o = asp_rl(&["validate", "--spec", "/nonexistent/spec.json"]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).starts_with("error:"));
}

#[test]
fn train_rejects_missing_config() {
    let dir = tempfile::tempdir().unwrap();
    let o = asp_rl(&[
        "train",
        "--config",
        "/nonexistent/config.json",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(!o.status.success());
}

#[test]
fn train_then_compare_every_algorithm() {
    let dir = tempfile::tempdir().unwrap();
    let config = config_path();
    let mut runs = Vec::new();
    for algo in ["qlearning", "dqn", "a2c", "rainbow"] {
        let out = dir.path().join(algo);
        let o = asp_rl(&[
            "train", "--config", &config, "--out", out.to_str().unwrap(), "--algo", algo,
            "--trials", "2", "--episodes", "60", "--seed", "3",
        ]);
        assert!(o.status.success(), "{algo}: {}", String::from_utf8_lossy(&o.stderr));
        for file in ["trial_000.csv", "trial_001.csv", "aggregate.csv", "summary.json"] {
            assert!(out.join(file).exists(), "{algo} missing {file}");
        }
        runs.push(out);
    }
    let cmp = dir.path().join("cmp");
    let mut args = vec!["compare", "--out", cmp.to_str().unwrap(), "--runs"];
    args.extend(runs.iter().map(|p| p.to_str().unwrap()));
    let o = asp_rl(&args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(cmp.join("comparison.csv")).unwrap();
    assert_eq!(csv.lines().count(), 5);
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(cmp.join("comparison.json")).unwrap()).unwrap();
    let by_run = json.as_object().unwrap();
    assert_eq!(by_run.len(), 4);
    assert!(by_run.contains_key("rainbow"));
}

#[test]
fn unknown_algorithm_is_a_usage_error() {
    let o = asp_rl(&["train", "--config", &config_path(), "--out", "/tmp/x", "--algo", "ppo"]);
    assert!(!o.status.success());
}
