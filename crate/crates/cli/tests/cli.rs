use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn repcf(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_repcf")).args(args).env_remove("CF_SEED").output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = repcf(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn code(args: &[&str]) -> i32 {
    repcf(args).status.code().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Generates a corpus and its encodings in `dir`.
fn fixture(dir: &Path, n: usize) {
    let n = n.to_string();
    ok(&["generate", "--n", &n, "--out", s(&dir.join("corpus.jsonl"))]);
    ok(&["encode", "--corpus", s(&dir.join("corpus.jsonl")), "--out", s(&dir.join("x.emb1"))]);
}

#[test]
fn bad_arguments_exit_2() {
    assert_eq!(code(&["fit", "--bogus"]), 2);
    assert_eq!(code(&["frobnicate"]), 2);
    let dir = TempDir::new().unwrap();
    fixture(dir.path(), 50);
    let emb = dir.path().join("x.emb1");
    assert_eq!(code(&["fit", "--embeddings", s(&emb), "--kind", "rotate", "--out", s(&dir.path().join("iv"))]), 2);
}

#[test]
fn corrupted_magic_exits_3() {
    let dir = TempDir::new().unwrap();
    fixture(dir.path(), 50);
    let emb = dir.path().join("x.emb1");
    let mut bytes = std::fs::read(&emb).unwrap();
    bytes[0] = b'X';
    std::fs::write(&emb, bytes).unwrap();
    let out = repcf(&["fit", "--embeddings", s(&emb), "--kind", "erase", "--out", s(&dir.path().join("iv"))]);
    assert_eq!(out.status.code(), Some(3));
    assert!(out.stdout.is_empty());
    assert!(!out.stderr.is_empty());
}

#[test]
fn single_class_fit_exits_4() {
    let dir = TempDir::new().unwrap();
    fixture(dir.path(), 40);
    let sidecar = dir.path().join("x.emb1.jsonl");
    let text = std::fs::read_to_string(&sidecar).unwrap().replace("\"z\":1", "\"z\":0");
    std::fs::write(&sidecar, text).unwrap();
    let out = repcf(&["fit", "--embeddings", s(&dir.path().join("x.emb1")), "--kind", "mimic", "--out", s(&dir.path().join("iv"))]);
    assert_eq!(out.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&out.stderr).contains("class"));
}

#[test]
fn fit_mimic_reports_matched_covariance() {
    let dir = TempDir::new().unwrap();
    fixture(dir.path(), 2000);
    let report = ok(&["fit", "--embeddings", s(&dir.path().join("x.emb1")), "--kind", "mimic", "--source", "m", "--out", s(&dir.path().join("iv"))]);
    let v: serde_json::Value = serde_json::from_str(&report).unwrap();
    assert!(v["cov_gap_relative"].as_f64().unwrap() <= 1e-5, "{report}");
}

#[test]
fn identity_pipeline_matches_reconstruction_byte_for_byte() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    ok(&["generate", "--n", "300", "--out", s(&d.join("corpus.jsonl"))]);
    let dim = 16 * 8;
    let mut iv = b"CFIV".to_vec();
    iv.extend(1u16.to_le_bytes());
    iv.extend([0u8, 255]);
    iv.extend((dim as u32).to_le_bytes());
    iv.extend(0f64.to_le_bytes());
    for i in 0..dim * dim {
        iv.extend(if i % (dim + 1) == 0 { 1f64 } else { 0f64 }.to_le_bytes());
    }
    for _ in 0..3 * dim {
        iv.extend(0f64.to_le_bytes());
    }
    std::fs::write(d.join("identity.cfiv"), iv).unwrap();
    ok(&[
        "pipeline", "--corpus", s(&d.join("corpus.jsonl")), "--intervention", s(&d.join("identity.cfiv")),
        "--out-cf", s(&d.join("cf.jsonl")), "--out-noint", s(&d.join("noint.jsonl")),
    ]);
    let cf = std::fs::read(d.join("cf.jsonl")).unwrap();
    assert_eq!(cf, std::fs::read(d.join("noint.jsonl")).unwrap());
    assert_eq!(cf, std::fs::read(d.join("corpus.jsonl")).unwrap());
}

#[test]
fn mimic_pipeline_flips_pronouns() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    ok(&["generate", "--n", "3000", "--out", s(&d.join("corpus.jsonl"))]);
    let summary = ok(&[
        "pipeline", "--corpus", s(&d.join("corpus.jsonl")), "--kind", "mimic", "--source", "m",
        "--out-cf", s(&d.join("cf.jsonl")), "--out-noint", s(&d.join("noint.jsonl")),
    ]);
    let v: serde_json::Value = serde_json::from_str(&summary).unwrap();
    assert!(v["flip_rate"].as_f64().unwrap() >= 0.95, "{summary}");
    assert_eq!(v["direction"], "m->f");
}

#[test]
fn external_inverter_round_trip_equals_native_mode() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    let corpus = d.join("corpus.jsonl");
    ok(&["generate", "--n", "500", "--out", s(&corpus)]);
    let common = ["--corpus", s(&corpus), "--kind", "mimic", "--source", "f"];
    let native = ok(&[&["pipeline"], &common[..], &["--out-cf", s(&d.join("cf.jsonl")), "--out-noint", s(&d.join("noint.jsonl"))]].concat());

    let ext = d.join("ext");
    ok(&[&["pipeline"], &common[..], &["--out-cf", "unused", "--out-noint", "unused", "--external-dir", s(&ext)]].concat());
    let manifest: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(ext.join("inverter.json")).unwrap()).unwrap();
    assert_eq!(manifest["beam_width"], 4);
    // the synthetic inverter stands in for the external one
    for name in ["noint", "cf"] {
        ok(&["invert", "--embeddings", s(&ext.join(format!("{name}.emb1"))), "--out", s(&ext.join(format!("{name}.texts.jsonl")))]);
    }
    let merged = ok(&[&["pipeline"], &common[..], &["--out-cf", s(&d.join("cf2.jsonl")), "--out-noint", s(&d.join("noint2.jsonl")), "--merge-dir", s(&ext)]].concat());
    assert_eq!(native, merged);
    for (a, b) in [("cf.jsonl", "cf2.jsonl"), ("noint.jsonl", "noint2.jsonl")] {
        assert_eq!(std::fs::read(d.join(a)).unwrap(), std::fs::read(d.join(b)).unwrap(), "{a}");
    }
}

#[test]
fn tpr_gap_on_hand_count_fixture() {
    let dir = TempDir::new().unwrap();
    let p = dir.path().join("pred.jsonl");
    let mut lines = Vec::new();
    // group 1: 8 true, 6 correct; group 0: 10 true, 9 correct
    for i in 0..8 {
        lines.push(format!(r#"{{"y":"nurse","pred":"{}","z":1}}"#, if i < 6 { "nurse" } else { "surgeon" }));
    }
    for i in 0..10 {
        lines.push(format!(r#"{{"y":"nurse","pred":"{}","z":0}}"#, if i < 9 { "nurse" } else { "surgeon" }));
    }
    std::fs::write(&p, lines.join("\n")).unwrap();
    let v: serde_json::Value = serde_json::from_str(&ok(&["tpr-gap", "--predictions", s(&p)])).unwrap();
    assert!((v["mean_gap"].as_f64().unwrap() - 0.15).abs() < 1e-12);
}

#[test]
fn augment_doubles_the_corpus() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    ok(&["generate", "--n", "600", "--out", s(&d.join("corpus.jsonl"))]);
    ok(&[
        "pipeline", "--corpus", s(&d.join("corpus.jsonl")), "--kind", "mimic", "--source", "m",
        "--out-cf", s(&d.join("cf.jsonl")), "--out-noint", s(&d.join("noint.jsonl")),
    ]);
    ok(&["augment", "--orig", s(&d.join("corpus.jsonl")), "--cf", s(&d.join("cf.jsonl")), "--kind", "mimic", "--out", s(&d.join("aug.jsonl"))]);
    assert_eq!(std::fs::read_to_string(d.join("aug.jsonl")).unwrap().lines().count(), 1200);
}

#[test]
fn delta_reports_target_pronouns_first() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    ok(&["generate", "--n", "3000", "--out", s(&d.join("all.jsonl"))]);
    let male: String = std::fs::read_to_string(d.join("all.jsonl")).unwrap().lines().filter(|l| l.contains("\"z\":0")).map(|l| format!("{l}\n")).collect();
    std::fs::write(d.join("corpus.jsonl"), male).unwrap();
    // fit on both classes, then apply to the male subset
    ok(&["encode", "--corpus", s(&d.join("all.jsonl")), "--out", s(&d.join("all.emb1"))]);
    ok(&["fit", "--embeddings", s(&d.join("all.emb1")), "--kind", "mimic", "--source", "m", "--out", s(&d.join("iv.cfiv"))]);
    ok(&[
        "pipeline", "--corpus", s(&d.join("corpus.jsonl")), "--intervention", s(&d.join("iv.cfiv")),
        "--out-cf", s(&d.join("cf.jsonl")), "--out-noint", s(&d.join("noint.jsonl")),
    ]);
    let out = ok(&[
        "delta", "--orig", s(&d.join("corpus.jsonl")), "--cf", s(&d.join("cf.jsonl")), "--noint", s(&d.join("noint.jsonl")),
        "--out", s(&d.join("delta.csv")),
    ]);
    let v: serde_json::Value = serde_json::from_str(&out).unwrap();
    let top: Vec<&str> = v["most_increased"].as_array().unwrap().iter().take(2).map(|t| t.as_str().unwrap()).collect();
    assert!(top.contains(&"she") && top.contains(&"her"), "{out}");
    assert!(std::fs::read_to_string(d.join("delta.csv")).unwrap().starts_with("token,p_orig,p_cf,p_cf_noint,delta"));
}

#[test]
fn experiment_single_setting_is_one_row_and_deterministic() {
    let args = ["experiment", "--seeds", "0", "--train-size", "300", "--test-size", "300", "--settings", "original"];
    let a = ok(&args);
    let b = ok(&args);
    assert_eq!(a, b);
    let rows: Vec<&str> = a.lines().filter(|l| l.starts_with("original")).collect();
    assert_eq!(rows.len(), 1, "{a}");
    assert!(!a.contains("mimic"), "{a}");
}

#[test]
fn seed_flag_overrides_environment() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    let run = |seed_env: Option<&str>, args: &[&str]| {
        let mut c = Command::new(env!("CARGO_BIN_EXE_repcf"));
        c.args(args);
        match seed_env {
            Some(v) => c.env("CF_SEED", v),
            None => c.env_remove("CF_SEED"),
        };
        assert!(c.status().unwrap().success());
    };
    run(Some("5"), &["generate", "--n", "30", "--out", s(&d.join("env.jsonl"))]);
    run(None, &["generate", "--n", "30", "--seed", "5", "--out", s(&d.join("flag.jsonl"))]);
    run(Some("9"), &["generate", "--n", "30", "--seed", "5", "--out", s(&d.join("both.jsonl"))]);
    run(None, &["generate", "--n", "30", "--out", s(&d.join("zero.jsonl"))]);
    let read = |n: &str| std::fs::read(d.join(n)).unwrap();
    assert_eq!(read("env.jsonl"), read("flag.jsonl"));
    assert_eq!(read("both.jsonl"), read("flag.jsonl"));
    assert_ne!(read("zero.jsonl"), read("flag.jsonl"));
}
