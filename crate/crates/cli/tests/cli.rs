use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_backtrack"));
    c.env_remove("BACKTRACK_WORKERS");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn backtrack")
}

fn ok(args: &[&str]) {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

/// y = 2a − b + 1.5ab + noise in data.csv; labels.csv has a class driven
/// by a and c in place of y.
fn write_data(dir: &Path, rows: usize) -> PathBuf {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
    let mut numeric = String::from("y,a,b,c\n");
    let mut labels = String::from("cls,a,b,c\n");
    for _ in 0..rows {
        let x: Vec<f64> = (0..3).map(|_| rng.random_range(-2.0..2.0)).collect();
        let y = 2.0 * x[0] - x[1] + 1.5 * x[0] * x[1] + rng.random_range(-0.3..0.3);
        let cls = if x[0] + x[2] + rng.random_range(-1.0..1.0) > 0.0 { "up" } else { "down" };
        let row = format!("{:.6},{:.6},{:.6}\n", x[0], x[1], x[2]);
        numeric.push_str(&format!("{y:.6},{row}"));
        labels.push_str(&format!("{cls},{row}"));
    }
    fs::write(dir.join("labels.csv"), labels).unwrap();
    let path = dir.join("data.csv");
    fs::write(&path, numeric).unwrap();
    path
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn fit_writes_tree_paths_and_model() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_data(dir.path(), 40);
    let out = dir.path().join("fit");
    ok(&["fit", "--input", data.to_str().unwrap(), "--response", "y", "--out", out.to_str().unwrap(), "--workers", "1"]);
    let tree = read_json(&out.join("tree.json"));
    assert!(!tree["paths"].as_array().unwrap().is_empty());
    assert_eq!(tree["column_names"], serde_json::json!(["a", "b", "c"]));
    let header = fs::read_to_string(out.join("paths.csv")).unwrap();
    assert!(header.starts_with("rank,"));
    let model = read_json(&out.join("model.json"));
    let active: Vec<Value> = model["terms"].as_array().unwrap().iter().map(|t| t["variable"].clone()).collect();
    assert!(active.contains(&serde_json::json!([1, 2])), "interaction missing from {active:?}");
}

#[test]
fn first_order_tree_has_one_path() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_data(dir.path(), 40);
    let out = dir.path().join("fit");
    ok(&["fit", "--input", data.to_str().unwrap(), "--response", "y", "--out", out.to_str().unwrap(), "--max-order", "1"]);
    let tree = read_json(&out.join("tree.json"));
    assert_eq!(tree["paths"].as_array().unwrap().len(), 1);
    assert_eq!(tree["candidates"].as_array().unwrap().len(), 3);
}

#[test]
fn classification_fit_and_cv() {
    let dir = tempfile::tempdir().unwrap();
    write_data(dir.path(), 50);
    let data = dir.path().join("labels.csv");
    let d = data.to_str().unwrap();
    let fit = dir.path().join("fit");
    ok(&["fit", "--input", d, "--labels", "cls", "--out", fit.to_str().unwrap(), "--grid-len", "20"]);
    let model = read_json(&fit.join("model.json"));
    let mut names: Vec<&str> = model["class_names"].as_array().unwrap().iter().map(|c| c.as_str().unwrap()).collect();
    names.sort();
    assert_eq!(names, ["down", "up"]);
    let cv = dir.path().join("cv");
    ok(&[
        "cv", "--input", d, "--labels", "cls", "--out", cv.to_str().unwrap(), "--grid-len", "15", "--seed", "2",
        "--folds", "3", "--repeats", "1",
    ]);
    assert!(cv.join("cv_summary.json").exists());
}

#[test]
fn cv_and_export_paths() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_data(dir.path(), 40);
    let cv = dir.path().join("cv");
    ok(&[
        "cv", "--input", data.to_str().unwrap(), "--response", "y", "--out", cv.to_str().unwrap(), "--seed", "9",
        "--grid-len", "30", "--repeats", "2",
    ]);
    let summary = read_json(&cv.join("cv_summary.json"));
    assert!(summary["chosen_k"].as_u64().unwrap() >= 1);
    let cv_csv = fs::read_to_string(cv.join("cv.csv")).unwrap();
    assert!(cv_csv.lines().count() > 1);

    let tree = cv.join("tree.json");
    let wide = dir.path().join("wide.csv");
    let long = dir.path().join("long.csv");
    ok(&["export-paths", "--tree", tree.to_str().unwrap(), "--out", wide.to_str().unwrap()]);
    ok(&["export-paths", "--tree", tree.to_str().unwrap(), "--out", long.to_str().unwrap(), "--format", "long"]);
    let wide = fs::read_to_string(wide).unwrap();
    assert!(wide.starts_with("rank,l,lambda,[1],[2],[3]"));
    let long = fs::read_to_string(long).unwrap();
    assert!(long.starts_with("rank,l,lambda,variable,coefficient\n"));
}

#[test]
fn input_errors_exit_with_code_two() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_data(dir.path(), 20);
    let d = data.to_str().unwrap();
    let out = dir.path().join("x");
    let o = out.to_str().unwrap();
    let missing = run(&["fit", "--input", "nope.csv", "--response", "y", "--out", o]);
    assert_eq!(missing.status.code(), Some(2));
    let no_column = run(&["fit", "--input", d, "--response", "zzz", "--out", o]);
    assert_eq!(no_column.status.code(), Some(2));
    let no_seed = run(&["cv", "--input", d, "--response", "y", "--out", o]);
    assert_eq!(no_seed.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&no_seed.stderr).contains("--seed"));
    let zero_workers = run(&["fit", "--input", d, "--response", "y", "--out", o, "--workers", "0"]);
    assert_eq!(zero_workers.status.code(), Some(2));
    let bad_env = bin().args(["fit", "--input", d, "--response", "y", "--out", o]).env("BACKTRACK_WORKERS", "x").output().unwrap();
    assert_eq!(bad_env.status.code(), Some(2));
    let config = dir.path().join("bad.json");
    fs::write(&config, r#"{"sed": 1}"#).unwrap();
    let unknown = run(&["cv", "--config", config.to_str().unwrap(), "--input", d, "--response", "y", "--out", o]);
    assert_eq!(unknown.status.code(), Some(2));
}

#[test]
fn config_file_supplies_the_seed() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_data(dir.path(), 30);
    let config = dir.path().join("cfg.json");
    fs::write(&config, r#"{"seed": 4, "engine": {"grid_len": 20}, "cv": {"repeats": 1}}"#).unwrap();
    let out = dir.path().join("cv");
    ok(&[
        "cv", "--config", config.to_str().unwrap(), "--input", data.to_str().unwrap(), "--response", "y", "--out",
        out.to_str().unwrap(),
    ]);
    let tree = read_json(&out.join("tree.json"));
    assert_eq!(tree["lambda"].as_array().unwrap().len(), 20);
}

#[test]
fn simulate_table_schema() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sim");
    ok(&[
        "simulate", "--scenario", "1", "--replications", "1", "--n", "60", "--p", "12", "--test-rows", "200",
        "--methods", "main,backtracking,oracle", "--seed", "3", "--repeats", "1", "--grid-len", "30", "--out",
        out.to_str().unwrap(),
    ]);
    let table = fs::read_to_string(out.join("table.csv")).unwrap();
    let mut lines = table.lines();
    assert_eq!(lines.next(), Some("scenario,snr,statistic,main,iterate,backtracking,oracle"));
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    let stats: Vec<&str> = rows.iter().map(|r| r[2]).collect();
    assert_eq!(stats, ["l2sq", "fp_main", "fn_main", "fp_inter", "fn_inter"]);
    // methods that were not run leave their column empty
    assert!(rows.iter().all(|r| r[4].is_empty() && !r[3].is_empty() && !r[6].is_empty()));
    let reps = fs::read_to_string(out.join("replications.jsonl")).unwrap();
    assert_eq!(reps.lines().count(), 1);
    let meta = read_json(&out.join("metadata.json"));
    assert_eq!(meta["methods"], serde_json::json!(["main", "backtracking", "oracle"]));
}

#[test]
fn verify_theory_small_run() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("theory");
    ok(&[
        "verify-theory", "--seed", "1", "--lemma-trials", "5", "--draws", "4", "--out", out.to_str().unwrap(),
    ]);
    let report = read_json(&out.join("theory_report.json"));
    assert_eq!(report["summary"]["lemma_passed"], 5);
    assert_eq!(report["summary"]["entry_order_holds"], true);
    assert_eq!(report["theorem"]["outcomes"].as_array().unwrap().len(), 4);
}
