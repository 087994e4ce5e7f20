use std::path::Path;

use rtopt::dataset::{load_dataset, Pipeline};

fn cli(args: &[&str]) -> i32 {
    rtopt::cli::run(std::iter::once("rtopt").chain(args.iter().copied()))
}

fn path(dir: &tempfile::TempDir, name: &str) -> String {
    dir.path().join(name).to_string_lossy().into_owned()
}

fn synth(dir: &tempfile::TempDir, scenario: &str, cycles: &str) -> String {
    let out = path(dir, "data.csv");
    let code = cli(&["synth", "--scenario", scenario, "--cycles", cycles, "--targets", "8", "--seed", "5", "--out", &out]);
    assert_eq!(code, 0);
    out
}

#[test]
fn synth_writes_a_loadable_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(&dir, "random_noise", "30");
    let series = load_dataset(Path::new(&data), Pipeline::PreSubmit).unwrap();
    assert_eq!(series.len(), 30);
    assert!(series.cycles.iter().all(|c| c.records.len() == 8));
}

#[test]
fn config_file_and_flags_agree() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = path(&dir, "synth.cfg");
    std::fs::write(&cfg, "scenario = transition_churn\ncycles = 25\ntargets = 8\nseed = 5\nchurn_dwell = 2\n").unwrap();
    let (a, b) = (path(&dir, "a.csv"), path(&dir, "b.csv"));
    assert_eq!(cli(&["synth", "--config", &cfg, "--out", &a]), 0);
    let flags = [
        "synth", "--scenario", "transition_churn", "--cycles", "25", "--targets", "8", "--seed", "5", "--churn-dwell", "2",
        "--out", &b,
    ];
    assert_eq!(cli(&flags), 0);
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
}

#[test]
fn unknown_config_key_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = path(&dir, "bad.cfg");
    std::fs::write(&cfg, "scenario = random_noise\nbogus = 1\n").unwrap();
    assert_eq!(cli(&["synth", "--config", &cfg, "--out", &path(&dir, "x.csv")]), 2);
}

#[test]
fn reward_for_the_wrong_pipeline_needs_force() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(&dir, "flaky_mix", "30");
    let out = path(&dir, "r.json");
    let base = ["replay", "--dataset", &data, "--pipeline", "pre", "--reward", "rnchange", "--warm-start", "5"];
    assert_eq!(cli(&[&base[..], &["--out", &out]].concat()), 2);
    assert!(!Path::new(&out).exists());
    assert_eq!(cli(&[&base[..], &["--force", "--out", &out]].concat()), 0);
}

#[test]
fn report_has_five_rows_per_cycle() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(&dir, "deterministic_failures", "30");
    let json = path(&dir, "r.json");
    let csv = path(&dir, "r.csv");
    let code = cli(&["replay", "--dataset", &data, "--pipeline", "pre", "--policy", "rocket", "--warm-start", "10", "--out", &json]);
    assert_eq!(code, 0);
    assert_eq!(cli(&["report", "--in", &json, "--csv", &csv]), 0);
    let text = std::fs::read_to_string(&csv).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("budget,cycle_id,metric,value"));
    assert_eq!(lines.count(), 20 * 5);
}

#[test]
fn sweep_reports_every_budget() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(&dir, "deterministic_failures", "24");
    let json = path(&dir, "s.json");
    let code = cli(&[
        "sweep", "--dataset", &data, "--pipeline", "pre", "--policy", "rocket", "--budgets", "0.25,1.0", "--warm-start",
        "10", "--workers", "2", "--out", &json,
    ]);
    assert_eq!(code, 0);
    let reports: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&json).unwrap()).unwrap();
    let budgets: Vec<f64> = reports.as_array().unwrap().iter().map(|r| r["config"]["budget"].as_f64().unwrap()).collect();
    assert_eq!(budgets, [0.25, 1.0]);
}

#[test]
fn exit_codes() {
    assert_eq!(cli(&["--help"]), 0);
    assert_eq!(cli(&["frobnicate"]), 2);
    assert_eq!(cli(&["replay", "--dataset", "/nonexistent/data.csv", "--pipeline", "pre"]), 3);
}
