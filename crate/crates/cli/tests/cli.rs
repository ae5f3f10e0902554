use std::path::Path;
use std::process::{Command, Output};

use t2star_amp::phantom::PhantomSpec;

fn t2star(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_t2star")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = t2star(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn small_spec(dir: &Path) -> String {
    let spec = PhantomSpec { shape: [32, 32, 8], ..PhantomSpec::brain_like() };
    let path = dir.join("spec.json");
    std::fs::write(&path, serde_json::to_string(&spec).unwrap()).unwrap();
    path.to_str().unwrap().to_string()
}

fn scan(dir: &Path, rate: &str, seed: &str) -> String {
    let spec = small_spec(dir);
    let scan = dir.join("scan");
    let s = scan.to_str().unwrap().to_string();
    ok(&["simulate", "--spec", &spec, "--out", &s]);
    ok(&["sample", "--rate", rate, "--seed", seed, "--out", &s]);
    s
}

fn p(dir: &Path, name: &str) -> String {
    dir.join(name).to_str().unwrap().to_string()
}

#[test]
fn end_to_end_for_every_method() {
    let dir = tempfile::tempdir().unwrap();
    let s = scan(dir.path(), "0.4", "3");
    for method in ["lsq", "l1", "amp-pe"] {
        let out = p(dir.path(), method);
        ok(&["reconstruct", "--method", method, "--in", &s, "--out", &out]);
        let run: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join(method).join("run.json")).unwrap()).unwrap();
        assert_eq!(run["method"], method);
        let report = p(dir.path(), &format!("{method}.json"));
        let stdout = ok(&["evaluate", "--in", &out, "--ref", &s, "--out", &report]).stdout;
        assert!(String::from_utf8_lossy(&stdout).contains("nrmse x0"));
        let m: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
        let x0 = m["nrmse_x0"].as_f64().unwrap();
        assert!(x0 > 0.0 && x0 < 1.0, "{method}: nrmse {x0}");
        if method == "amp-pe" {
            assert!(!run["log"].as_array().unwrap().is_empty());
            assert!(run["params"]["theta"].as_f64().unwrap() > 0.0);
        }
    }
}

#[test]
fn same_inputs_give_identical_files() {
    let dir = tempfile::tempdir().unwrap();
    let s = scan(dir.path(), "0.3", "5");
    for tag in ["a", "b"] {
        ok(&["reconstruct", "--method", "amp-pe", "--in", &s, "--out", &p(dir.path(), tag), "--max-iter", "20"]);
    }
    for f in ["x0.bin", "r2star.bin", "echoes/echo_00.bin", "run.json"] {
        let a = std::fs::read(dir.path().join("a").join(f)).unwrap();
        let b = std::fs::read(dir.path().join("b").join(f)).unwrap();
        assert!(a == b, "{f} differs");
    }
}

#[test]
fn validation_errors_exit_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let s = scan(dir.path(), "0.3", "1");
    let out = p(dir.path(), "r");
    let bad_beta = t2star(&["reconstruct", "--method", "amp-pe", "--in", &s, "--out", &out, "--beta", "1.5"]);
    assert_eq!(bad_beta.status.code(), Some(2));
    let bad_rate = t2star(&["sample", "--rate", "1.5", "--out", &s]);
    assert_eq!(bad_rate.status.code(), Some(2));
    let bad_method = t2star(&["reconstruct", "--method", "cs", "--in", &s, "--out", &out]);
    assert_eq!(bad_method.status.code(), Some(2));
    let missing = t2star(&["reconstruct", "--method", "lsq", "--in", &p(dir.path(), "nowhere"), "--out", &out]);
    assert_eq!(missing.status.code(), Some(1));
}

#[test]
fn sweep_writes_tables() {
    let dir = tempfile::tempdir().unwrap();
    small_spec(dir.path());
    let cfg = serde_json::json!({
        "spec_path": "spec.json",
        "rates": [0.3, 0.5],
        "methods": ["lsq"],
        "seeds": [1, 2],
        "out_dir": "out"
    });
    let cfg_path = dir.path().join("cfg.json");
    std::fs::write(&cfg_path, cfg.to_string()).unwrap();
    let stdout = ok(&["sweep", "--config", cfg_path.to_str().unwrap()]).stdout;
    assert!(String::from_utf8_lossy(&stdout).contains("lsq"));
    let table = std::fs::read_to_string(dir.path().join("out/table_x0.csv")).unwrap();
    assert_eq!(table.lines().count(), 2);
    assert!(table.lines().nth(1).unwrap().contains('±'));
}
