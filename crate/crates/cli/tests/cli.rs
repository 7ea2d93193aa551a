use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use richpref::formats::{answer_log_to_string, load_pool};
use richpref::simuser::{AnswerLog, SimUserConfig, SimulatedUser};
use richpref::{Rationality, RewardWeights};

fn richpref(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_richpref"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn build_pool(dir: &Path, name: &str) -> String {
    let path = dir.join(name);
    let p = path.to_str().unwrap();
    let o = richpref(&[
        "pool",
        "build",
        "--environments",
        "4",
        "--rewards",
        "4",
        "--pool-size",
        "20",
        "--out",
        p,
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    p.to_string()
}

#[test]
fn pool_build_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let a = build_pool(dir.path(), "a.json");
    let b = build_pool(dir.path(), "b.json");
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    let pool = load_pool(a.as_ref()).unwrap();
    assert_eq!(pool.queries.len(), 20);
    assert_eq!(pool.environments.len(), 4);
}

#[test]
fn run_writes_tables() {
    let dir = tempfile::tempdir().unwrap();
    let pool = build_pool(dir.path(), "pool.json");
    let out = dir.path().join("out");
    let o = richpref(&[
        "run",
        "--pool",
        &pool,
        "--ground-truths",
        "2",
        "--repetitions",
        "2",
        "--budget",
        "4",
        "--hypotheses",
        "30",
        "--test-environments",
        "1",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("8 runs, 0 failed"));
    for f in [
        "aggregate.csv",
        "beliefs.jsonl",
        "failures.csv",
        "provenance.json",
        "runs.csv",
        "timings.csv",
    ] {
        assert!(out.join(f).is_file(), "{f} missing");
    }
    let runs = fs::read_to_string(out.join("runs.csv")).unwrap();
    // Header plus (budget + 1) rows for each of the 8 runs.
    assert_eq!(runs.lines().count(), 1 + 8 * 5);

    let csv = dir.path().join("scatter.csv");
    let o = richpref(&[
        "scatter",
        "--beliefs",
        out.join("beliefs.jsonl").to_str().unwrap(),
        "--out",
        csv.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let rows = fs::read_to_string(&csv).unwrap().lines().count();
    assert_eq!(rows, 1 + 8 * 31);
}

#[test]
fn print_config_applies_overrides() {
    let o = richpref(&[
        "run",
        "--pool",
        "unused.json",
        "--preset",
        "oracle",
        "--budget",
        "7",
        "--modes",
        "rich",
        "--print-config",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["budget"], 7);
    assert_eq!(v["modes"], serde_json::json!(["rich"]));
    assert_eq!(v["repetitions"], 1);
}

#[test]
fn errors_exit_with_code_2() {
    let o = richpref(&[
        "run",
        "--pool",
        "/nonexistent/pool.json",
        "--out",
        "/tmp/never",
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("/nonexistent/pool.json"));

    let o = richpref(&["run", "--pool", "x.json"]);
    assert_eq!(o.status.code(), Some(2));

    let o = richpref(&[
        "estimate-beta",
        "--log",
        "/nonexistent/log.json",
        "--theta",
        "1,2",
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn estimate_beta_recovers_simulated_values() {
    let dir = tempfile::tempdir().unwrap();
    let pool = load_pool(build_pool(dir.path(), "pool.json").as_ref()).unwrap();
    let theta = RewardWeights::normalized([0.5, -0.3, 0.2, 0.6, -0.4, 0.1, 0.3]).unwrap();
    let mut user = SimulatedUser::new(SimUserConfig {
        theta_gt: theta,
        beta_c: Rationality::new(2.0).unwrap(),
        beta_f: Rationality::new(2.5).unwrap(),
        epsilon: 0.0,
        seed: 4,
    });
    let mut log = AnswerLog::new();
    for _ in 0..50 {
        for q in &pool.queries {
            log.record(q, user.answer(q, true));
        }
    }
    let path = dir.path().join("log.json");
    fs::write(&path, answer_log_to_string(&log)).unwrap();
    let theta_arg = theta
        .values()
        .iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join(",");
    let o = richpref(&[
        "estimate-beta",
        "--log",
        path.to_str().unwrap(),
        "--theta",
        &theta_arg,
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["answers"], 1000);
    let c = v["beta_c"]["value"].as_f64().unwrap();
    let f = v["beta_f"]["value"].as_f64().unwrap();
    assert!((1.3..=2.7).contains(&c), "beta_c {c}");
    assert!((1.6..=3.4).contains(&f), "beta_f {f}");
}
