use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn graphcp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_graphcp"))
        .args(args)
        .env_remove("GRAPHCP_OUT")
        .output()
        .expect("spawn graphcp")
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn small_dataset(dir: &Path) -> PathBuf {
    let path = dir.join("ds.json");
    let o = graphcp(&["generate", "--nodes", "6", "--steps", "120", "--seed", "3", "--out", path.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    path
}

const QUICK: &[&str] = &["--runs", "1", "--ensemble-size", "3", "--trees", "5"];

fn run_with(dir: &Path, ds: &Path, out: &str, extra: &[&str]) -> Output {
    let out = dir.join(out);
    let mut args = vec!["run", "--dataset", ds.to_str().unwrap(), "--out", out.to_str().unwrap()];
    args.extend_from_slice(QUICK);
    args.extend_from_slice(extra);
    graphcp(&args)
}

fn rows(o: &Output) -> Vec<Vec<String>> {
    stdout(o)
        .lines()
        .filter(|l| l.trim_start().chars().next().is_some_and(|c| c.is_ascii_digit()))
        .map(|l| l.split_whitespace().map(str::to_string).collect())
        .collect()
}

#[test]
fn verify_shrinkage_on_triangle() {
    let o = graphcp(&["verify-shrinkage", "--graph", fixture("k3.json").to_str().unwrap(), "--tau", "0,0.5"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let rows = rows(&o);
    assert_eq!(rows[0][..4], ["0", "0.000", "0.000", "0.000"]);
    assert_eq!(rows[1][..4], ["0.5", "-2.773", "-1.500", "1.273"]);
}

#[test]
fn verify_shrinkage_marks_singular_filter() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("rows.json");
    let o = graphcp(&[
        "verify-shrinkage",
        "--graph",
        fixture("c4.json").to_str().unwrap(),
        "--tau",
        "0.25,0.6",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(3));
    let rows: Value = serde_json::from_str(&std::fs::read_to_string(out).unwrap()).unwrap();
    assert_eq!(rows[0]["status"], "ok");
    assert_eq!(rows[1]["status"], "singular");
    assert!(rows[1]["log_det_filter"].is_null());
}

#[test]
fn generate_is_idempotent() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.json");
    let b = dir.path().join("b.json");
    for p in [&a, &b] {
        let o = graphcp(&["generate", "--nodes", "8", "--steps", "50", "--seed", "4", "--out", p.to_str().unwrap()]);
        assert!(o.status.success());
        assert!(stdout(&o).contains("homophily check"));
    }
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
}

#[test]
fn generate_rejects_empty_graph() {
    let o = graphcp(&["generate", "--nodes", "0", "--out", "/nonexistent/x.json"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("--nodes"));
}

#[test]
fn bad_alpha_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let ds = small_dataset(dir.path());
    let o = run_with(dir.path(), &ds, "out", &["--alpha", "1.5"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("--alpha"), "{}", stderr(&o));
}

#[test]
fn missing_dataset_is_a_config_error() {
    let o = graphcp(&["run", "--dataset", "/nonexistent/ds.json"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn run_writes_reports_for_both_modes() {
    let dir = tempfile::tempdir().unwrap();
    let ds = small_dataset(dir.path());
    let o = run_with(dir.path(), &ds, "out", &["--mode", "both", "--emit-regions"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = dir.path().join("out");
    let report: Value = serde_json::from_str(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    let modes: Vec<&str> = report["modes"].as_array().unwrap().iter().map(|m| m["mode"].as_str().unwrap()).collect();
    assert_eq!(modes, ["graph-aware", "graph-agnostic"]);
    assert!(report["volume_ratios"][0]["ratio"]["mean"].is_number());
    let csv = std::fs::read_to_string(out.join("report.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
    let regions = std::fs::read_to_string(out.join("regions.jsonl")).unwrap();
    let first: Value = serde_json::from_str(regions.lines().next().unwrap()).unwrap();
    assert!(first["radius_sq"].is_number());
    let config: Value = serde_json::from_str(&std::fs::read_to_string(out.join("config.json")).unwrap()).unwrap();
    assert_eq!(config["num_runs"], 1);
}

#[test]
fn run_is_reproducible_apart_from_timing() {
    let dir = tempfile::tempdir().unwrap();
    let ds = small_dataset(dir.path());
    let load = |name: &str| {
        let o = run_with(dir.path(), &ds, name, &["--seed", "9"]);
        assert!(o.status.success(), "{}", stderr(&o));
        let mut v: Value =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join(name).join("report.json")).unwrap()).unwrap();
        v.as_object_mut().unwrap().remove("timing");
        v
    };
    assert_eq!(load("a"), load("b"));
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let ds = small_dataset(dir.path());
    let cfg = dir.path().join("exp.toml");
    std::fs::write(&cfg, "alpha = 0.2\nwindow = 5\nmode = \"graph-aware\"\n").unwrap();
    let o = run_with(dir.path(), &ds, "out", &["--config", cfg.to_str().unwrap(), "--window", "4"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let echoed: Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("out/config.json")).unwrap()).unwrap();
    assert_eq!(echoed["alpha"], 0.2);
    assert_eq!(echoed["window"], 4);
    assert_eq!(echoed["mode"], "graph-aware");
}

#[test]
fn default_output_goes_under_env_root() {
    let dir = tempfile::tempdir().unwrap();
    let ds = small_dataset(dir.path());
    let root = dir.path().join("root");
    let mut args = vec!["run", "--dataset", ds.to_str().unwrap(), "--mode", "graph-aware"];
    args.extend_from_slice(QUICK);
    let o = Command::new(env!("CARGO_BIN_EXE_graphcp"))
        .args(&args)
        .env("GRAPHCP_OUT", &root)
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(root.join("ds-run/report.json").exists());
}

#[test]
fn persistence_and_external_predictors() {
    let dir = tempfile::tempdir().unwrap();
    let ds = small_dataset(dir.path());
    let o = run_with(dir.path(), &ds, "p", &["--predictor", "persistence"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let o = run_with(dir.path(), &ds, "e", &["--predictor", "external"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("--predictions"));
}

#[test]
fn grid_runs_every_combination() {
    let dir = tempfile::tempdir().unwrap();
    let ds = small_dataset(dir.path());
    let out = dir.path().join("grid");
    let mut args = vec![
        "grid",
        "--dataset",
        ds.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--mode",
        "graph-aware",
        "--alphas",
        "0.1,0.2",
        "--windows",
        "4,6",
    ];
    args.extend_from_slice(QUICK);
    let o = graphcp(&args);
    assert!(o.status.success(), "{}", stderr(&o));
    let entries: Value = serde_json::from_str(&std::fs::read_to_string(out.join("grid.json")).unwrap()).unwrap();
    assert_eq!(entries.as_array().unwrap().len(), 4);
    assert_eq!(entries[3]["config"]["window"], 6);
    assert_eq!(entries[3]["config"]["alpha"], 0.2);
}

#[test]
fn convert_round_trips_through_csv() {
    let dir = tempfile::tempdir().unwrap();
    let ds = small_dataset(dir.path());
    let csv_dir = dir.path().join("csv");
    let o = graphcp(&["convert", "json-to-csv", "--input", ds.to_str().unwrap(), "--out-dir", csv_dir.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let back = dir.path().join("back.json");
    let o = graphcp(&[
        "convert",
        "csv-to-json",
        "--signals",
        csv_dir.join("signals.csv").to_str().unwrap(),
        "--edges",
        csv_dir.join("edges.csv").to_str().unwrap(),
        "--out",
        back.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let a: Value = serde_json::from_str(&std::fs::read_to_string(&ds).unwrap()).unwrap();
    let b: Value = serde_json::from_str(&std::fs::read_to_string(&back).unwrap()).unwrap();
    assert_eq!(a["edges"], b["edges"]);
    assert_eq!(a["signals"], b["signals"]);
}

#[test]
fn external_trace_is_ingested() {
    let dir = tempfile::tempdir().unwrap();
    let ds = small_dataset(dir.path());
    let data: Value = serde_json::from_str(&std::fs::read_to_string(&ds).unwrap()).unwrap();
    let signals = data["signals"].as_array().unwrap();
    // persistence forecasts from every origin but the last
    let origins = signals.len() - 1;
    let trace = serde_json::json!({
        "horizon": 1,
        "timestamps": (0..origins).collect::<Vec<_>>(),
        "predictions": signals[..origins].iter().map(|row| vec![row.clone()]).collect::<Vec<_>>(),
    });
    let path = dir.path().join("trace.json");
    std::fs::write(&path, trace.to_string()).unwrap();
    let o = run_with(
        dir.path(),
        &ds,
        "ext",
        &["--predictor", "external", "--predictions", path.to_str().unwrap()],
    );
    assert!(o.status.success(), "{}", stderr(&o));

    let short = serde_json::json!({"horizon": 1, "timestamps": [0, 2], "predictions": [[signals[0]], [signals[1]]]});
    std::fs::write(&path, short.to_string()).unwrap();
    let o = run_with(
        dir.path(),
        &ds,
        "bad",
        &["--predictor", "external", "--predictions", path.to_str().unwrap()],
    );
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("missing timestamp 1"), "{}", stderr(&o));
}
