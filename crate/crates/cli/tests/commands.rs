use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn affordance(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_affordance"))
        .args(args)
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .env_remove("AFFORD_CONFIG")
        .output()
        .unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> Value {
    let out = affordance(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap_or(Value::Null)
}

#[test]
fn cluster_is_deterministic_and_generate_honours_samples() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["make-fixture"]);
    ok(d, &["mine", "--auto-accept"]);
    let a = ok(d, &["cluster", "--k", "6", "--seed", "7"]);
    let b = ok(d, &["cluster", "--k", "6", "--seed", "7"]);
    assert_eq!(a["checksum"], b["checksum"]);
    assert_eq!(a["k"], 6);
    ok(d, &["train-classifier"]);
    ok(d, &["train-vae"]);
    let dataset = std::fs::read_to_string(d.join("data/dataset.afd")).unwrap();
    let first: Value = serde_json::from_str(dataset.lines().nth(1).unwrap()).unwrap();
    let scene = first["scene_id"].as_str().unwrap();
    let out = ok(d, &["generate", "--scene", scene, "--point", "40,30", "--samples", "5"]);
    assert_eq!(out["samples"].as_array().unwrap().len(), 5);
    let id = first["id"].to_string();
    let score = ok(d, &["score", "--record", &id, "--m", "3"]);
    assert_eq!(score["m"], 3);
    assert!(score["distance"].as_f64().unwrap() >= 0.0);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(affordance(d, &["--no-such-flag"]).status.code(), Some(1));
    assert_eq!(affordance(d, &["cluster", "--k", "0"]).status.code(), Some(1));
    assert_eq!(affordance(d, &["--help"]).status.code(), Some(0));
    let missing = affordance(d, &["cluster"]);
    assert_eq!(missing.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&missing.stderr).contains("affordance mine"));

    ok(d, &["make-fixture"]);
    ok(d, &["mine", "--auto-accept"]);
    ok(d, &["cluster"]);
    let diverged = affordance(d, &["train-classifier", "--lr", "1e300", "--epochs", "3"]);
    assert_eq!(diverged.status.code(), Some(3), "{}", String::from_utf8_lossy(&diverged.stderr));
    assert_eq!(affordance(d, &["train-vae"]).status.code(), Some(2));
}

#[test]
fn environment_overrides_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["make-fixture"]);
    let out = Command::new(env!("CARGO_BIN_EXE_affordance"))
        .args(["config", "--set", "model.m=4"])
        .current_dir(d)
        .env("AFFORD_MODEL_K", "11")
        .env("AFFORD_MODEL_M", "9")
        .output()
        .unwrap();
    let text = String::from_utf8(out.stdout).unwrap();
    let cfg: toml::Table = text.parse().unwrap();
    assert_eq!(cfg["model"]["k"].as_integer(), Some(11));
    assert_eq!(cfg["model"]["m"].as_integer(), Some(4));
    assert_eq!(cfg["model"]["hidden"].as_integer(), Some(48));
}
