use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use ml2r::bench::{read_rows, rows_to_string, write_rows, ResultRow, CSV_HEADER, PLAN_HEADER};
use ml2r::plan::Plan;

fn ml2r(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ml2r")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = ml2r(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn without_time(csv: &str) -> Vec<String> {
    csv.lines()
        .map(|l| {
            let mut cols: Vec<&str> = l.split(',').collect();
            cols.remove(3);
            cols.join(",")
        })
        .collect()
}

fn path(dir: &Path, name: &str) -> String {
    dir.join(name).display().to_string()
}

#[test]
fn plan_save_and_run() {
    let dir = tempfile::tempdir().unwrap();
    let doc = path(dir.path(), "plan.toml");
    let csv = ok(&["plan", "--model", "call", "--kinds", "ml2r,mlmc", "--eps-grid", "1,3", "--save", &doc]);
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some(PLAN_HEADER));
    assert!(lines.next().unwrap().starts_with("ml2r,1,0.5,2,5,1,"));
    assert_eq!(csv.lines().count(), 5);
    let plan = Plan::from_text(&fs::read_to_string(&doc).unwrap()).unwrap();
    assert_eq!((plan.r, plan.m), (2, 5));

    let a = ok(&["run", "--model", "call", "--plan", &doc, "--seed", "4"]);
    let b = ok(&["run", "--model", "call", "--plan", &doc, "--seed", "4"]);
    let estimate = |s: &str| s.lines().find(|l| l.starts_with("estimate")).unwrap().to_string();
    assert_eq!(estimate(&a), estimate(&b));
    let reps = ok(&["run", "--model", "call", "--plan", &doc, "--reps", "4"]);
    assert!(reps.contains("l2_error = "));
}

#[test]
fn bench_is_reproducible_across_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let mut tables = Vec::new();
    for (i, threads) in ["1", "4", "1"].iter().enumerate() {
        let out = path(dir.path(), &format!("b{i}.csv"));
        ok(&[
            "bench", "--model", "nested", "--kind", "ml2r", "--eps-grid", "1,2", "--reps", "6", "--seed", "8",
            "--params", "published", "--threads", threads, "--out", &out,
        ]);
        let text = fs::read_to_string(&out).unwrap();
        assert!(text.starts_with(CSV_HEADER));
        assert!(Path::new(&format!("{out}.derived.csv")).exists());
        tables.push(without_time(&text));
    }
    assert_eq!(tables[0], tables[1]);
    assert_eq!(tables[0], tables[2]);
}

#[test]
fn config_file_and_compare() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = path(dir.path(), "bench.toml");
    fs::write(
        &cfg,
        "kind = \"ml2r\"\neps_grid = [1, 2]\nreps = 4\nseed = 3\nparams = \"published\"\n[model]\nmodel = \"lookback\"\n",
    )
    .unwrap();
    let a = path(dir.path(), "a.csv");
    let b = path(dir.path(), "b.csv");
    ok(&["bench", "--config", &cfg, "--out", &a]);
    ok(&["bench", "--config", &cfg, "--kind", "mlmc", "--out", &b]);
    let cmp = ok(&["compare", &b, &a]);
    assert_eq!(cmp.lines().next(), Some("k,eps,cost_ratio,time_ratio,time_ratio_at_equal_rmse"));
    assert_eq!(cmp.lines().count(), 3);

    fs::write(&cfg, "kind = \"ml2r\"\ncolour = 1\n").unwrap();
    assert!(!ml2r(&["bench", "--config", &cfg]).status.success());
}

#[test]
fn calibrate_writes_a_parameter_document() {
    let dir = tempfile::tempdir().unwrap();
    let out = path(dir.path(), "params.toml");
    ok(&["calibrate", "--model", "synthetic", "--samples", "20000", "--out", &out]);
    let text = fs::read_to_string(&out).unwrap();
    assert!(text.contains("V1 = ") && text.contains("varY0 = "));
    let csv = ok(&["plan", "--model", "synthetic", "--params-file", &out, "--eps-grid", "2"]);
    assert_eq!(csv.lines().count(), 2);
}

#[test]
fn errors_exit_non_zero() {
    let out = ml2r(&["plan", "--model", "digital"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("digital"));
    assert!(!ml2r(&["plan", "--rounding", "sideways"]).status.success());
    assert!(!ml2r(&["compare", "/nonexistent/a.csv", "/nonexistent/b.csv"]).status.success());
}

#[test]
fn zero_budget_aborts_gracefully() {
    let out = ml2r(&["bench", "--model", "call", "--eps-grid", "1,2", "--reps", "4", "--budget-seconds", "0"]);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("budget"));
    assert_eq!(String::from_utf8(out.stdout).unwrap().trim(), CSV_HEADER);
}

#[test]
fn result_rows_round_trip() {
    let rows = vec![
        ResultRow {
            k: 1,
            eps: 0.5,
            l2_error: Some(0.1 + 0.2),
            time_s: 1e-3,
            bias: Some(-1.5e-17),
            var: 0.123456789012345,
            r: 3,
            m: 4,
            h_inv: 1,
            n: 318087,
            cost: 707185.6737232137,
        },
        ResultRow { k: 2, eps: 0.25, l2_error: None, time_s: 0.0, bias: None, var: 1.0, r: 2, m: 2, h_inv: 2, n: 1, cost: 4.0 },
    ];
    let mut buf = Vec::new();
    write_rows(&mut buf, &rows).unwrap();
    assert_eq!(read_rows(buf.as_slice()).unwrap(), rows);
    assert_eq!(rows_to_string(&rows).unwrap().as_bytes(), buf.as_slice());
    assert!(read_rows("a,b\n1,2\n".as_bytes()).is_err());
}
