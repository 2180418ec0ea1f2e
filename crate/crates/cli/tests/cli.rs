use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use hcnas::latency::load_table;
use hcnas::{discrete_latency, DiscreteArch};
use serde_json::Value;
use tempfile::TempDir;

fn hcnas(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hcnas"))
        .current_dir(dir)
        .env_remove("HCNAS_SEED")
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = hcnas(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

/// Generated instance; `small` gives an enumerable 2-stage space.
fn instance(small: bool) -> TempDir {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    if small {
        ok(p, &["gen", "space", "--stages", "2", "--max-depth", "3", "--configs", "3", "--out", "space.json"]);
    } else {
        ok(p, &["gen", "space", "--out", "space.json"]);
    }
    ok(p, &["gen", "table", "--space", "space.json", "--seed", "1", "--out", "table.json"]);
    ok(p, &["gen", "objective", "--space", "space.json", "--seed", "2", "--out", "objective.json"]);
    dir
}

fn problem<'a>(budget: &'a str, out: &'a str) -> Vec<&'a str> {
    vec![
        "search",
        "--space",
        "space.json",
        "--latency-table",
        "table.json",
        "--objective",
        "objective.json",
        "--budget-ms",
        budget,
        "--out",
        out,
    ]
}

fn minimal_latency(dir: &Path) -> f64 {
    let out = hcnas(dir, &problem("0", "unused"));
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8(out.stderr).unwrap();
    stderr.split_whitespace().rev().nth(1).unwrap().parse().unwrap()
}

fn read(path: PathBuf) -> String {
    std::fs::read_to_string(path).unwrap()
}

#[test]
fn search_result_respects_the_budget() {
    let dir = instance(false);
    let p = dir.path();
    let budget = minimal_latency(p) * 1.8;
    ok(p, &problem(&budget.to_string(), "run"));
    let result: Value = serde_json::from_str(&read(p.join("run/result.json"))).unwrap();
    let arch: DiscreteArch = serde_json::from_value(result["arch"].clone()).unwrap();
    let table = load_table(p.join("table.json"), None).unwrap();
    let latency = discrete_latency(&arch, &table);
    assert!(latency <= budget + 1e-9);
    assert_eq!(result["latency_ms"].as_f64().unwrap(), latency);
    let trace = read(p.join("run/trace.csv"));
    assert!(trace.starts_with("iter,block,objective,latency_ms,fw_gap,step_size\n"));
    assert_eq!(trace.lines().count(), 501);
    assert!(p.join("run/params.json").exists());
}

#[test]
fn budget_below_lightest_exits_2_with_the_minimum() {
    let dir = instance(true);
    let out = hcnas(dir.path(), &problem("0.5", "run"));
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("minimal achievable latency"));
    assert!(!dir.path().join("run").exists());
}

#[test]
fn manifest_rerun_is_byte_identical() {
    let dir = instance(false);
    let p = dir.path();
    let budget = (minimal_latency(p) * 1.5).to_string();
    let mut args = problem(&budget, "first");
    args.extend(["--seed", "11", "--block-rule", "alternate", "--schedule", "fw2", "--exact-mckp"]);
    ok(p, &args);
    ok(p, &["search", "--manifest", "first/manifest.json", "--out", "second"]);
    for file in ["result.json", "trace.csv", "params.json"] {
        assert_eq!(read(p.join("first").join(file)), read(p.join("second").join(file)), "{file}");
    }
    let manifest: Value = serde_json::from_str(&read(p.join("second/manifest.json"))).unwrap();
    assert_eq!(manifest["seed"], 11);
    assert_eq!(manifest["solver"]["schedule"], "fw2");
}

#[test]
fn seed_environment_variable_wins() {
    let dir = instance(true);
    let p = dir.path();
    let budget = (minimal_latency(p) * 1.3).to_string();
    let mut args = problem(&budget, "run");
    args.extend(["--seed", "1"]);
    let out = Command::new(env!("CARGO_BIN_EXE_hcnas")).current_dir(p).env("HCNAS_SEED", "99").args(&args).output().unwrap();
    assert!(out.status.success());
    let manifest: Value = serde_json::from_str(&read(p.join("run/manifest.json"))).unwrap();
    assert_eq!(manifest["seed"], 99);
}

#[test]
fn input_errors_exit_1() {
    let dir = instance(true);
    let p = dir.path();
    assert_eq!(hcnas(p, &["search", "--space", "space.json"]).status.code(), Some(1));
    std::fs::write(p.join("broken.json"), "{").unwrap();
    let mut args = problem("10", "run");
    args[4] = "broken.json";
    assert_eq!(hcnas(p, &args).status.code(), Some(1));
    let mut args = problem("10", "run");
    args[2] = "missing.json";
    assert_eq!(hcnas(p, &args).status.code(), Some(1));
    assert_eq!(hcnas(p, &["toy", "--d", "0"]).status.code(), Some(1));
}

#[test]
fn toy_writes_the_comparison_csv() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["toy", "--out", "."]);
    let text = read(dir.path().join("fw_vs_gd.csv"));
    let mut rows = csv::Reader::from_reader(text.as_bytes());
    assert_eq!(rows.headers().unwrap(), vec!["method", "lambda", "iter", "objective", "constraint_residual"]);
    let rows: Vec<csv::StringRecord> = rows.records().map(Result::unwrap).collect();
    let fw: Vec<_> = rows.iter().filter(|r| &r[0] == "fw").collect();
    assert_eq!(fw.len(), 201);
    assert!((fw[200][3].parse::<f64>().unwrap() - 0.1).abs() <= 1e-3);
    let lambdas: std::collections::BTreeSet<&str> = rows.iter().filter(|r| &r[0] == "gd").map(|r| &r[1]).collect();
    assert_eq!(lambdas.into_iter().collect::<Vec<_>>(), vec!["0.1", "1", "10", "100"]);
    let last_one = rows.iter().rfind(|r| &r[0] == "gd" && &r[1] == "1").unwrap();
    assert!((last_one[4].parse::<f64>().unwrap() - 1.0 / 11.0).abs() <= 1e-6);
}

#[test]
fn enumerate_and_project_agree_with_the_search() {
    let dir = instance(true);
    let p = dir.path();
    let budget = (minimal_latency(p) * 1.4).to_string();
    let summary: Value = serde_json::from_str(&ok(
        p,
        &["enumerate", "--space", "space.json", "--latency-table", "table.json", "--objective", "objective.json", "--budget", &budget, "--out", "all.csv"],
    ))
    .unwrap();
    assert_eq!(summary["count"], 1296);
    assert!(summary["best"]["latency"].as_f64().unwrap() <= budget.parse::<f64>().unwrap() + 1e-9);
    assert_eq!(read(p.join("all.csv")).lines().count(), 1297);

    ok(p, &problem(&budget, "run"));
    let projected: Value = serde_json::from_str(&ok(
        p,
        &["project", "--params", "run/params.json", "--latency-table", "table.json", "--budget", &budget, "--exact-mckp"],
    ))
    .unwrap();
    let result: Value = serde_json::from_str(&read(p.join("run/result.json"))).unwrap();
    assert_eq!(projected["arch"], result["arch"]);
    assert_eq!(projected["report"], result["report"]);
    assert!(projected["greedy"]["projected_latency"].as_f64().unwrap() <= budget.parse::<f64>().unwrap() + 1e-9);

    let over = hcnas(p, &["project", "--params", "run/params.json", "--latency-table", "table.json", "--budget", "0"]);
    assert_eq!(over.status.code(), Some(2));
}

#[test]
fn validate_latency_fits_a_unit_slope() {
    let dir = instance(true);
    let fit: Value = serde_json::from_str(&ok(
        dir.path(),
        &["validate-latency", "--space", "space.json", "--latency-table", "table.json", "--samples", "4000", "--points", "12", "--out", "v"],
    ))
    .unwrap();
    assert!((fit["slope"].as_f64().unwrap() - 1.0).abs() < 0.05, "{fit}");
    assert!(fit["r2"].as_f64().unwrap() > 0.98, "{fit}");
    assert_eq!(read(dir.path().join("v/latency_validation.csv")).lines().count(), 13);
}

#[test]
fn baseline_divergence_exits_3() {
    let dir = instance(false);
    let p = dir.path();
    let budget = (minimal_latency(p) * 1.05).to_string();
    let base = |lambda: &str, out: &str| {
        let mut args = problem(&budget, out);
        args[0] = "baseline";
        args.extend(["--lambda", lambda]);
        args.iter().map(|s| s.to_string()).collect::<Vec<_>>()
    };
    let args = base("1e30", "huge");
    let out = hcnas(p, &args.iter().map(String::as_str).collect::<Vec<_>>());
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(p.join("huge/trace.csv").exists());

    let args = base("0", "free");
    ok(p, &args.iter().map(String::as_str).collect::<Vec<_>>());
    let result: Value = serde_json::from_str(&read(p.join("free/result.json"))).unwrap();
    assert_eq!(result["violates_budget"], true);
}
