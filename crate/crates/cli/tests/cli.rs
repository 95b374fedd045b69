use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn abcr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_abcr")).args(args).env_remove("ABCR_OUTPUT_DIR").output().expect("binary runs")
}

fn ok(args: &[&str]) {
    let out = abcr(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

fn data_rows(p: &Path) -> usize {
    fs::read_to_string(p).unwrap().lines().count() - 1
}

const QUICK_TOY: &str = "[abcr]\nnsim = 200\npilot_iter = 3000\n";

#[test]
fn simulate_toy_is_seeded() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b, c) = (tmp.path().join("a"), tmp.path().join("b"), tmp.path().join("c"));
    for (dir, seed) in [(&a, "5"), (&b, "5"), (&c, "6")] {
        ok(&["simulate", "--model", "toy", "--n", "15", "--epsilon", "0.1", "--inflation", "10", "--seed", seed, "--out", path(dir)]);
    }
    let read = |d: &Path| fs::read_to_string(d.join("data.csv")).unwrap();
    assert_eq!(data_rows(&a.join("data.csv")), 15);
    assert_eq!(read(&a), read(&b));
    assert_ne!(read(&a), read(&c));
    assert!(read(&a).lines().skip(1).all(|l| l.parse::<f64>().is_ok()));
}

#[test]
fn toy_fit_outputs_and_byte_identical_rerun() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("sim");
    ok(&["simulate", "--n", "30", "--seed", "11", "--out", path(&data)]);
    let cfg = tmp.path().join("cfg.toml");
    fs::write(&cfg, QUICK_TOY).unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for dir in [&a, &b] {
        ok(&["fit", "--config", path(&cfg), "--data", path(&data.join("data.csv")), "--n-iter", "20000", "--seed", "3", "--out", path(dir)]);
    }
    let chain_a = fs::read(a.join("chain.csv")).unwrap();
    assert_eq!(chain_a, fs::read(b.join("chain.csv")).unwrap());
    assert_eq!(data_rows(&a.join("chain.csv")), 18_000);

    let est = read_json(&a.join("mestimate.json"));
    assert_eq!(est["theta_tilde"].as_array().unwrap().len(), 2);
    assert_eq!(est["k"].as_array().unwrap().len(), 2);
    let summary = read_json(&a.join("summary.json"));
    assert!(summary["h"].as_f64().unwrap() > 0.0);
    assert_eq!(summary["calibrated"], Value::Bool(true));
    let cal = read_json(&a.join("calibration.json"));
    assert_eq!(cal["h"], summary["h"]);
    assert_eq!(summary["abcr"]["fbst"].as_array().unwrap().len(), 1);

    // The config echo reproduces the run.
    let c = tmp.path().join("c");
    ok(&["fit", "--config", path(&a.join("config.toml")), "--data", path(&data.join("data.csv")), "--out", path(&c)]);
    assert_eq!(chain_a, fs::read(c.join("chain.csv")).unwrap());
}

#[test]
fn toy_fit_with_mcmc_baseline() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("sim");
    ok(&["simulate", "--n", "30", "--seed", "12", "--out", path(&data)]);
    let cfg = tmp.path().join("cfg.toml");
    fs::write(&cfg, "[mcmc]\nn_iter = 6000\nburn_in = 2000\n").unwrap();
    let out = tmp.path().join("out");
    ok(&["fit", "--config", path(&cfg), "--data", path(&data.join("data.csv")), "--h", "0.05", "--n-iter", "5000", "--baseline", "mcmc", "--out", path(&out)]);
    assert!(!out.join("calibration.json").exists());
    assert_eq!(data_rows(&out.join("mcmc_chain.csv")), 4000);
    let summary = read_json(&out.join("summary.json"));
    assert_eq!(summary["h"].as_f64().unwrap(), 0.05);
    assert_eq!(summary["mcmc"]["method"], "full_mh");
}

#[test]
fn synthetic_shape_and_interaction_fit() {
    let tmp = tempfile::tempdir().unwrap();
    let (s1, s2) = (tmp.path().join("s1"), tmp.path().join("s2"));
    ok(&["gen-synthetic", "--seed", "8", "--out", path(&s1)]);
    ok(&["gen-synthetic", "--seed", "8", "--out", path(&s2)]);
    let file = s1.join("synthetic_long.csv");
    let text = fs::read_to_string(&file).unwrap();
    assert_eq!(text, fs::read_to_string(s2.join("synthetic_long.csv")).unwrap());
    let count = |resp: &str| text.lines().filter(|l| l.split(',').nth(1) == Some(resp)).count();
    assert_eq!(count("IgG"), 27 * 6);
    for r in ["IFNg", "IL6", "IL10", "TNFa"] {
        assert_eq!(count(r), 24 * 6);
    }

    let cfg = tmp.path().join("cfg.toml");
    fs::write(&cfg, "[model]\nkind = \"lmm\"\nresponse = \"IgG\"\ninteraction = true\ntransform = \"log\"\n\n[abcr]\nnsim = 200\npilot_iter = 3000\n").unwrap();
    let out = tmp.path().join("fit");
    ok(&["fit", "--config", path(&cfg), "--data", path(&file), "--n-iter", "5000", "--out", path(&out)]);
    let summary = read_json(&out.join("summary.json"));
    let names = summary["param_names"].as_array().unwrap();
    assert_eq!(names.len(), 14);
    let fbst = summary["abcr"]["fbst"].as_array().unwrap();
    assert_eq!(fbst.len(), 12);
    assert!(fbst.iter().all(|e| (0.0..=1.0).contains(&e["e_value"].as_f64().unwrap())));
    assert_eq!(summary["abcr"]["posterior"].as_array().unwrap().len(), 14);
}

#[test]
fn sensitivity_table_shape() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("cfg.toml");
    fs::write(&cfg, "[sensitivity]\ngrid_points = 81\n\n[sensitivity.abcr]\nnsim = 100\nn_iter = 4000\nburn_in = 400\npilot_iter = 3000\n").unwrap();
    let out = tmp.path().join("out");
    ok(&["sensitivity", "--config", path(&cfg), "--seed", "2", "--out", path(&out)]);
    let mut rdr = csv::Reader::from_path(out.join("sensitivity.csv")).unwrap();
    let headers = rdr.headers().unwrap().clone();
    let (m, p) = (headers.iter().position(|h| h == "method").unwrap(), headers.iter().position(|h| h == "parameter").unwrap());
    let rows: Vec<csv::StringRecord> = rdr.records().map(|r| r.unwrap()).collect();
    for method in ["abcr", "genuine", "empirical_likelihood"] {
        for param in ["mu", "sigma"] {
            assert_eq!(rows.iter().filter(|r| &r[m] == method && &r[p] == param).count(), 31, "{method}/{param}");
        }
    }
    assert_eq!(data_rows(&out.join("base_sample.csv")), 31);
}

#[test]
fn simstudy_record_count() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("cfg.toml");
    fs::write(
        &cfg,
        "[simstudy.abcr]\nnsim = 100\nn_iter = 5000\nburn_in = 500\npilot_iter = 3000\n\n[simstudy.mcmc]\nn_iter = 5000\nburn_in = 2000\n",
    )
    .unwrap();
    let out = tmp.path().join("out");
    ok(&["simstudy", "--config", path(&cfg), "--q", "3", "--g", "30", "--reps", "4", "--out", path(&out)]);
    let summary = read_json(&out.join("simstudy_summary.json"));
    let failures = summary["failures"].as_array().unwrap().len();
    assert_eq!(data_rows(&out.join("simstudy.csv")) + failures, 4 * 2 * 2);
    assert_eq!(data_rows(&out.join("simstudy_timings.csv")), data_rows(&out.join("simstudy.csv")));
}

#[test]
fn config_errors_exit_2_with_json() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bad.toml");
    fs::write(&cfg, "seed = 1\nunknown_key = true\n").unwrap();
    let out = abcr(&["simulate", "--config", path(&cfg), "--out", path(&tmp.path().join("o"))]);
    assert_eq!(out.status.code(), Some(2));
    let err: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["exit_code"], 2);
    assert!(err["message"].as_str().unwrap().contains("unknown_key"));
}

#[test]
fn numeric_failure_exits_3() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("flat.csv");
    fs::write(&data, format!("y\n{}", "1.0\n".repeat(20))).unwrap();
    let out = abcr(&["fit", "--data", path(&data), "--out", path(&tmp.path().join("o"))]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    let err: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert!(err["error"].is_string());
}

#[test]
fn output_root_from_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_abcr"))
        .args(["simulate", "--n", "5"])
        .env("ABCR_OUTPUT_DIR", tmp.path())
        .output()
        .unwrap();
    assert!(out.status.success());
    assert_eq!(data_rows(&tmp.path().join("simulate").join("data.csv")), 5);
}
