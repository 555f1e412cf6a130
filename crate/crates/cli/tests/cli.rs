use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_supercurve")).args(args).env_remove("SUPERCURVE_SEED").output().unwrap()
}

fn json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(&out.stdout)))
}

fn write_catalog(dir: &Path, name: &str, args: &[&str]) -> String {
    let path = dir.join(name).to_string_lossy().into_owned();
    let mut all = vec!["catalog"];
    all.extend_from_slice(args);
    all.extend(["-o", &path]);
    assert!(run(&all).status.success());
    path
}

#[test]
fn energy_of_the_identity() {
    let dir = tempfile::tempdir().unwrap();
    let id = write_catalog(dir.path(), "id.json", &["identity"]);
    let out = run(&["energy", "--input", &id]);
    assert_eq!(out.status.code(), Some(0));
    let v = json(&out);
    assert!((v["phi"]["value"].as_f64().unwrap() - std::f64::consts::PI).abs() < 1e-6);
    let out = run(&["energy", "--input", &id, "--region", "disc:0,0,1"]);
    assert!((json(&out)["total"]["value"].as_f64().unwrap() - std::f64::consts::FRAC_PI_2).abs() < 1e-6);
}

#[test]
fn floats_carry_seventeen_digits() {
    let dir = tempfile::tempdir().unwrap();
    let id = write_catalog(dir.path(), "id.json", &["identity"]);
    let text = String::from_utf8(run(&["energy", "--input", &id]).stdout).unwrap();
    let line = text.lines().find(|l| l.contains("\"value\"")).unwrap();
    let mantissa = line.split(':').nth(1).unwrap().trim().trim_end_matches(',').split('e').next().unwrap();
    assert_eq!(mantissa.replace(['.', '-'], "").len(), 17, "{line}");
}

#[test]
fn zero_degree_bundle_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.json");
    std::fs::write(&p, r#"{"curve":{"target":"projective","components":[[[1,0]],[[0,0],[1,0]]]},"bundle":0}"#).unwrap();
    let out = run(&["energy", "--input", p.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("bundle"));
    assert_eq!(run(&["energy"]).status.code(), Some(2));
    assert_eq!(run(&["catalog", "identity", "--d", "0"]).status.code(), Some(2));
}

#[test]
fn pullback_round_trip_is_covariant() {
    let dir = tempfile::tempdir().unwrap();
    let r = write_catalog(dir.path(), "r.json", &["random-rational", "--d", "-2"]);
    let pulled = dir.path().join("p.json");
    let out = run(&["pullback", "--input", &r, "--moebius", "2,0,1,0,0.5,0,1,0", "-o", pulled.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let e0 = json(&run(&["energy", "--input", &r]));
    let e1 = json(&run(&["energy", "--input", pulled.to_str().unwrap()]));
    for k in ["phi", "psi"] {
        let (a, b) = (e0[k]["value"].as_f64().unwrap(), e1[k]["value"].as_f64().unwrap());
        assert!((a - b).abs() < 1e-6 * (1.0 + a), "{k}: {a} vs {b}");
    }
    let res = json(&run(&["residual", "--input", pulled.to_str().unwrap()]));
    assert!(res["phi"].as_f64().unwrap() < 1e-6 && res["psi"].as_f64().unwrap() < 1e-6);
    assert_eq!(run(&["pullback", "--input", &r, "--moebius", "1,0,0,0"]).status.code(), Some(2));
    assert_eq!(run(&["pullback", "--input", &r, "--moebius", "0,0,0,0,0,0,0,0"]).status.code(), Some(2));
}

#[test]
fn bubble_family_writes_ladders() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("b.csv");
    let out = run(&["bubble", "--family", "bubble", "--csv", csv.to_str().unwrap()]);
    assert!(out.status.success());
    let v = json(&out);
    assert_eq!(v["points"].as_array().unwrap().len(), 1);
    let mut rd = csv::Reader::from_path(&csv).unwrap();
    assert_eq!(rd.headers().unwrap().iter().next(), Some("point"));
    assert_eq!(rd.records().count(), 4 * 5);
    let again = dir.path().join("c.csv");
    run(&["bubble", "--family", "bubble", "--csv", again.to_str().unwrap()]);
    assert_eq!(std::fs::read(&csv).unwrap(), std::fs::read(&again).unwrap());
    assert_eq!(run(&["bubble", "--count", "2"]).status.code(), Some(2));
}

#[test]
fn rho_and_convergence_on_the_bubble_tree() {
    let dir = tempfile::tempdir().unwrap();
    let l = write_catalog(dir.path(), "l.json", &["bubble-tree"]);
    let m = write_catalog(dir.path(), "m.json", &["bubble-tree", "--nu", "10000"]);
    let v = json(&run(&["rho", "--x", &l, "--y", &l, "--eps", "0.05", "--grid", "2000"]));
    assert!(v["total"].as_f64().unwrap() <= 1e-9);
    let v = json(&run(&["rho", "--x", &l, "--y", &m, "--eps", "0.05", "--grid", "2000"]));
    assert!(v["total"].as_f64().unwrap() <= 1e-2, "{v}");
    let one = write_catalog(dir.path(), "one.json", &["identity"]);
    assert_eq!(run(&["rho", "--x", &l, "--y", &one]).status.code(), Some(2));
    let out = run(&["convergence", "--catalog", "bubble", "--known-witnesses", "--grid", "2000"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    let out = run(&["convergence", "--limit", &l, "--member", &m, "--eps", "auto", "--grid", "2000"]);
    assert!(matches!(out.status.code(), Some(0 | 1)));
    assert_eq!(run(&["convergence"]).status.code(), Some(2));
}

#[test]
fn verify_suites_and_controlled_failure() {
    let dir = tempfile::tempdir().unwrap();
    for suite in ["invariance", "mvi", "isoperimetric", "residuals"] {
        let csv = dir.path().join(format!("{suite}.csv"));
        let out = run(&["verify", "--suite", suite, "--count", "8", "--csv", csv.to_str().unwrap()]);
        assert_eq!(out.status.code(), Some(0), "{suite}: {}", String::from_utf8_lossy(&out.stdout));
        assert_eq!(json(&out)["failed"], 0);
        assert_eq!(csv::Reader::from_path(&csv).unwrap().records().count(), 8);
    }
    let out = run(&["verify", "--suite", "isoperimetric", "--count", "4", "--constant", "0"]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(json(&out)["failed"], 4);
}

#[test]
fn configuration_layers() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, "count = 2\n").unwrap();
    let out = run(&["bubble", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let out = Command::new(env!("CARGO_BIN_EXE_supercurve"))
        .args(["bubble", "--config", cfg.to_str().unwrap()])
        .env("SUPERCURVE_COUNT", "3")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    std::fs::write(&cfg, "colour = 1\n").unwrap();
    assert_eq!(run(&["catalog", "identity", "--config", cfg.to_str().unwrap()]).status.code(), Some(2));
    assert_eq!(run(&["catalog", "identity", "--threads", "2"]).status.code(), Some(0));
}
