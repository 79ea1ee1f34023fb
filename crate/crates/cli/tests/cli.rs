use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use serde_json::Value;
use tempfile::TempDir;

const EXAMPLE: &str = "x1,x2,y
0.61,0.58,a
0.32,0.77,a
0.79,0.41,b
0.13,0.9,a
0.74,0.44,b
0.55,0.64,a
0.18,0.85,a
0.93,0.12,b
0.38,0.71,a
0.05,0.92,a
";

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_distrust"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stdout_json(o: &Output) -> Value {
    serde_json::from_slice(&o.stdout).unwrap_or_else(|e| {
        panic!(
            "stdout is not json ({e}): {}\nstderr: {}",
            String::from_utf8_lossy(&o.stdout),
            String::from_utf8_lossy(&o.stderr)
        )
    })
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Example table fitted with k = 2 and no scaling.
fn example_model(dir: &Path) -> PathBuf {
    let data = write(dir, "ex.csv", EXAMPLE);
    let model = dir.join("ex.dtm");
    let o = run(&["preprocess", s(&data), "--out", s(&model), "--target", "y", "--k", "2", "--no-normalize"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    model
}

#[test]
fn preprocess_reports_rank_list_range() {
    let dir = TempDir::new().unwrap();
    let data = write(dir.path(), "ex.csv", EXAMPLE);
    let model = dir.path().join("m.dtm");
    let o = run(&["preprocess", s(&data), "--out", s(&model), "--target", "y", "--k", "2", "--no-normalize"]);
    assert_eq!(code(&o), 0);
    assert!(model.exists());
    let v = stdout_json(&o);
    assert_eq!(v["n"], 10);
    assert_eq!(v["k"], 2);
    assert!((v["gamma_d_max"].as_f64().unwrap() - 0.372).abs() <= 5e-4);
    assert!((v["gamma_d_min"].as_f64().unwrap() - 0.0825).abs() <= 5e-4);
    assert_eq!(v["config"]["normalize"], false);
}

#[test]
fn score_emits_one_line_per_query() {
    let dir = TempDir::new().unwrap();
    let model = example_model(dir.path());
    let q = write(dir.path(), "q.csv", "x2,x1\n0.76,0.81\n0.5,0.5\n");
    let o = run(&["score", s(&model), s(&q), "--c", "0.2"]);
    assert_eq!(code(&o), 0);
    let lines: Vec<Value> = String::from_utf8(o.stdout)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.len(), 2);
    assert_eq!(lines[0]["row_id"], 0);
    assert!((lines[0]["p_o"].as_f64().unwrap() - 0.8413).abs() <= 1e-3);
    assert_eq!(lines[0]["r_q"].as_f64().unwrap(), 0.9);
    for l in &lines {
        let (po, pu) = (l["p_o"].as_f64().unwrap(), l["p_u"].as_f64().unwrap());
        assert_eq!(l["sdt"].as_f64().unwrap(), po * pu);
        assert!(l["wdt"].as_f64().unwrap() >= po.max(pu));
    }
}

#[test]
fn empty_query_file_gives_no_output() {
    let dir = TempDir::new().unwrap();
    let model = example_model(dir.path());
    for text in ["", "x1,x2\n"] {
        let q = write(dir.path(), "empty.csv", text);
        let o = run(&["score", s(&model), s(&q)]);
        assert_eq!(code(&o), 0);
        assert!(o.stdout.is_empty());
    }
}

#[test]
fn input_and_config_errors_map_to_exit_codes() {
    let dir = TempDir::new().unwrap();
    let data = write(dir.path(), "ex.csv", EXAMPLE);
    let out = dir.path().join("m.dtm");
    // no target
    assert_eq!(code(&run(&["preprocess", s(&data), "--out", s(&out)])), 3);
    // empty and unknown-target inputs
    let empty = write(dir.path(), "empty.csv", "");
    assert_eq!(code(&run(&["preprocess", s(&empty), "--out", s(&out), "--target", "y"])), 2);
    assert_eq!(code(&run(&["preprocess", s(&data), "--out", s(&out), "--target", "z"])), 2);
    let ragged = write(dir.path(), "ragged.csv", "x1,x2,y\n1,2,a\n3,b\n");
    assert_eq!(code(&run(&["preprocess", s(&ragged), "--out", s(&out), "--target", "y"])), 2);
    // k too large for ten rows
    assert_eq!(code(&run(&["preprocess", s(&data), "--out", s(&out), "--target", "y", "--k", "10"])), 3);
    assert_eq!(code(&run(&["preprocess", s(&data), "--out", s(&out), "--target", "y", "--k", "zero"])), 3);
    assert_eq!(code(&run(&["--help"])), 0);
    assert_eq!(code(&run(&["frobnicate"])), 3);
}

#[test]
fn score_rejects_bad_models_and_queries() {
    let dir = TempDir::new().unwrap();
    let model = example_model(dir.path());
    let q = write(dir.path(), "q.csv", "x1,x2\n0.81,0.76\n");
    assert_eq!(code(&run(&["score", s(&model), s(&q), "--no-data"])), 3);
    assert_eq!(code(&run(&["score", s(&model), s(&q), "--k", "3"])), 3);
    assert_eq!(code(&run(&["score", s(&model), s(&q), "--metric", "chebyshev"])), 3);
    let missing = write(dir.path(), "bad.csv", "x1\n0.5\n");
    assert_eq!(code(&run(&["score", s(&model), s(&missing)])), 2);
    let mut bytes = fs::read(&model).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0xff;
    let corrupt = dir.path().join("corrupt.dtm");
    fs::write(&corrupt, bytes).unwrap();
    assert_eq!(code(&run(&["score", s(&corrupt), s(&q)])), 2);
    assert_eq!(code(&run(&["score", s(&dir.path().join("nope.dtm")), s(&q)])), 2);
}

#[test]
fn config_file_sits_between_flags_and_defaults() {
    let dir = TempDir::new().unwrap();
    let data = write(dir.path(), "ex.csv", EXAMPLE);
    let cfg = write(dir.path(), "run.conf", "# shared\ntarget = y\nk = 3\nsigma-u = 0.2\n");
    let out = dir.path().join("m.dtm");
    let o = run(&["preprocess", s(&data), "--out", s(&out), "--config", s(&cfg), "--k", "2"]);
    assert_eq!(code(&o), 0);
    let v = stdout_json(&o);
    assert_eq!(v["k"], 2);
    assert_eq!(v["config"]["sigma_u"], 0.2);
    assert_eq!(v["config"]["sigma"], 0.1);
    let bad = write(dir.path(), "bad.conf", "target = y\nneighbours = 4\n");
    assert_eq!(code(&run(&["preprocess", s(&data), "--out", s(&out), "--config", s(&bad)])), 3);
}

fn planted_csv(dir: &Path) -> PathBuf {
    let mut rng = StdRng::seed_from_u64(7);
    let mut text = String::from("x1,x2,y\n");
    for i in 0..500 {
        let (x, y) = if i < 450 {
            (rng.random_range(0.45..0.55), rng.random_range(0.45..0.55))
        } else {
            (rng.random::<f64>(), rng.random::<f64>())
        };
        text.push_str(&format!("{x},{y},{}\n", if x < 0.5 { "l" } else { "r" }));
    }
    write(dir, "planted.csv", &text)
}

#[test]
fn tune_picks_the_planted_ratio() {
    let dir = TempDir::new().unwrap();
    let data = planted_csv(dir.path());
    let out = dir.path().join("tune.json");
    let o = run(&["tune", s(&data), "--out", s(&out), "--target", "y"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let v = stdout_json(&o);
    assert_eq!(v["c_opt"], 0.1);
    assert!(v["u_hat"].as_f64().is_some());
    let report: Value = serde_json::from_str(&fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(report["rows"].as_array().unwrap().len(), 3);
    assert_eq!(report["config"]["target"], "y");
    let curve = fs::read_to_string(dir.path().join("tune.vcurve.csv")).unwrap();
    assert_eq!(curve.lines().count(), 51);
    let o = run(&["tune", s(&data), "--out", s(&out), "--target", "y", "--c-grid", "0.6"]);
    assert_eq!(code(&o), 3);
}

#[test]
fn surrogate_training_enables_no_data_scoring() {
    let dir = TempDir::new().unwrap();
    let model = example_model(dir.path());
    let trained = dir.path().join("trained.dtm");
    let report = dir.path().join("surrogate.json");
    let o = run(&[
        "surrogate-train",
        s(&model),
        "--out",
        s(&trained),
        "--report",
        s(&report),
        "--epsilon",
        "inf",
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let v = stdout_json(&o);
    for kind in ["radius", "uncertainty"] {
        assert_eq!(v[kind]["sample_size"], 10);
        assert_eq!(v[kind]["trajectory"].as_array().unwrap().len(), 1);
        assert_eq!(v[kind]["converged"], true);
    }
    assert!(report.exists());
    let q = write(dir.path(), "q.csv", "x1,x2\n0.81,0.76\n0.2,0.2\n");
    let o = run(&["score", s(&trained), s(&q), "--no-data"]);
    assert_eq!(code(&o), 0);
    assert_eq!(String::from_utf8(o.stdout).unwrap().lines().count(), 2);
}

#[test]
fn synthetic_evaluation_writes_reports() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("eval");
    let o = run(&["evaluate", "--out", s(&out), "--n", "400"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for stem in ["sdt", "wdt"] {
        for ext in ["json", "csv", "svg"] {
            assert!(out.join(format!("{stem}.{ext}")).exists(), "{stem}.{ext}");
        }
    }
    let v = stdout_json(&o);
    assert!(v["wdt"]["spearman_rho"].as_f64().is_some());
    let counts: u64 = v["wdt"]["counts"].as_array().unwrap().iter().map(|c| c.as_u64().unwrap()).sum();
    assert_eq!(counts, 6400);
    assert!(out.join("summary.json").exists());
    assert_eq!(code(&run(&["evaluate", "--out", s(&out), "--region", "square"])), 3);
}

#[test]
fn external_predictions_are_bucketed() {
    let dir = TempDir::new().unwrap();
    let model = example_model(dir.path());
    let q = write(dir.path(), "q.csv", "x1,x2,y\n0.81,0.76,a\n0.6,0.6,a\n0.9,0.1,b\n");
    let preds = write(dir.path(), "p.csv", "row_id,prediction\n2,b\n0,b\n1,a\n");
    let out = dir.path().join("ext");
    let o = run(&[
        "evaluate",
        "--out",
        s(&out),
        "--model",
        s(&model),
        "--queries",
        s(&q),
        "--predictions",
        s(&preds),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let report: Value = serde_json::from_str(&fs::read_to_string(out.join("wdt.json")).unwrap()).unwrap();
    assert_eq!(report["count"], 3);
    let partial = write(dir.path(), "p2.csv", "row_id,prediction\n0,a\n");
    let o = run(&[
        "evaluate",
        "--out",
        s(&out),
        "--model",
        s(&model),
        "--queries",
        s(&q),
        "--predictions",
        s(&partial),
    ]);
    assert_eq!(code(&o), 2);
}
