//! End-to-end runs of the `tapfm` binary on a tiny corpus.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use serde_json::Value;
use tapfm::checkpoint::{Checkpoint, ModelMeta};

const CONFIG: &str = r#"{
  "seed": 5,
  "corpus": {"utterances_per_speaker": 12, "tn_examples": 40, "pbp_examples": 30, "pd_examples": 30},
  "pretrain": {"epochs": 1, "batch_size": 4},
  "finetune": {"epochs": 3, "batch_size": 8}
}"#;

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tapfm"))
        .current_dir(dir)
        .env_remove("TAPFM_SEED")
        .args(args)
        .output()
        .unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = run(dir, args);
    assert!(out.status.success(), "tapfm {args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn fails(dir: &Path, args: &[&str], code: i32) -> String {
    let out = run(dir, args);
    let err = String::from_utf8(out.stderr).unwrap();
    assert_eq!(out.status.code(), Some(code), "tapfm {args:?}: {err}");
    assert!(err.starts_with(&format!("E:{code}: ")), "{err}");
    err
}

fn jsonl(path: &Path) -> Vec<Value> {
    std::fs::read_to_string(path).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect()
}

/// A corpus plus stage-1 and stage-2 checkpoints, built once and shared.
fn workspace() -> &'static Path {
    static DIR: OnceLock<PathBuf> = OnceLock::new();
    DIR.get_or_init(|| {
        let d = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("cli-workspace");
        let _ = std::fs::remove_dir_all(&d);
        std::fs::create_dir_all(&d).unwrap();
        std::fs::write(d.join("run.json"), CONFIG).unwrap();
        ok(&d, &["gen-corpus", "--config", "run.json"]);
        ok(&d, &["pretrain", "--config", "run.json", "--out", "pre.ckpt"]);
        ok(&d, &["finetune", "--config", "run.json", "--ckpt", "pre.ckpt", "--out", "fe.ckpt"]);
        d
    })
}

#[test]
fn help_and_version_exit_zero() {
    let d = workspace();
    assert!(ok(d, &["--help"]).contains("gen-corpus"));
    assert!(ok(d, &["--version"]).contains(env!("CARGO_PKG_VERSION")));
}

#[test]
fn usage_errors_exit_one() {
    let d = workspace();
    fails(d, &["frobnicate"], 1);
    fails(d, &["pretrain", "--config", "run.json"], 1);
    let out = Command::new(env!("CARGO_BIN_EXE_tapfm"))
        .current_dir(d)
        .env("TAPFM_SEED", "soon")
        .args(["gen-corpus", "--config", "run.json", "--out", "never"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(!d.join("never").exists());
}

#[test]
fn bad_inputs_exit_two() {
    let d = workspace();
    std::fs::write(d.join("typo.json"), r#"{"pretrain": {"epoch": 3}}"#).unwrap();
    assert!(fails(d, &["gen-corpus", "--config", "typo.json"], 2).contains("epoch"));
    fails(d, &["gen-corpus", "--config", "missing.json"], 2);
    fails(d, &["pretrain", "--config", "run.json", "--out", "x.ckpt", "--no-span", "--no-sentence", "--no-mlm"], 2);
    // a stage-1 checkpoint has no heads
    assert!(fails(d, &["predict", "--ckpt", "pre.ckpt", "--in", "run.json", "--out", "o.jsonl"], 2)
        .contains("not a frontend checkpoint"));
    std::fs::write(d.join("junk.ckpt"), b"not a checkpoint").unwrap();
    fails(d, &["eval-align", "--ckpt", "junk.ckpt", "--corpus", "corpus"], 2);
}

#[test]
fn seed_flag_overrides_config() {
    let d = workspace();
    let report: Value = serde_json::from_str(&ok(d, &["--seed", "9", "gen-corpus", "--config", "run.json", "--out", "c9"])).unwrap();
    assert_eq!(report["config"]["seed"], 9);
    let a = std::fs::read(d.join("c9/pretrain.train.jsonl")).unwrap();
    let b = std::fs::read(d.join("corpus/pretrain.train.jsonl")).unwrap();
    assert_ne!(a, b);
}

#[test]
fn pretrain_report_and_alignment_export() {
    let d = workspace();
    let rows = jsonl(&d.join("pre.ckpt.report.jsonl"));
    assert_eq!(rows.len(), 1);
    assert!(rows[0]["total"].as_f64().unwrap().is_finite());
    let summary: Value =
        serde_json::from_str(&ok(d, &["eval-align", "--ckpt", "pre.ckpt", "--config", "run.json", "--csv-dir", "csv"]))
            .unwrap();
    let n = summary["utterances"].as_u64().unwrap() as usize;
    assert!(n > 0);
    assert!((0.0..=1.0).contains(&summary["top1"].as_f64().unwrap()));
    let csvs: Vec<_> = std::fs::read_dir(d.join("csv")).unwrap().collect();
    assert_eq!(csvs.len(), n);
}

#[test]
fn finetune_report_weights() {
    let d = workspace();
    let rows = jsonl(&d.join("fe.ckpt.report.jsonl"));
    assert_eq!(rows.len(), 3);
    for r in &rows {
        let w: Vec<f64> = r["weights"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
        assert!((w.iter().sum::<f64>() - 3.0).abs() < 1e-9);
    }
    ok(d, &["finetune", "--config", "run.json", "--out", "uni.ckpt", "--no-dwa-plus", "--no-resconformer"]);
    for r in jsonl(&d.join("uni.ckpt.report.jsonl")) {
        assert_eq!(r["weights"], serde_json::json!([1.0, 1.0, 1.0]));
    }
    let ck = Checkpoint::load(&d.join("uni.ckpt")).unwrap();
    assert!(matches!(&ck.model, ModelMeta::Frontend(m) if m.frontend.conformer_blocks == 0));
    assert!(ck.store.iter().all(|(name, _)| !name.starts_with("conf.")));
}

#[test]
fn eval_matches_the_last_finetune_epoch() {
    let d = workspace();
    let metrics: Value = serde_json::from_str(&ok(
        d,
        &[
            "eval",
            "--ckpt",
            "fe.ckpt",
            "--tn",
            "corpus/tn.dev.jsonl",
            "--pbp",
            "corpus/pbp.dev.jsonl",
            "--pd",
            "corpus/pd.dev.jsonl",
        ],
    ))
    .unwrap();
    let last = jsonl(&d.join("fe.ckpt.report.jsonl")).pop().unwrap();
    // the checkpoint stores 32-bit values, so scores may move by a rounding hair
    for key in ["tn_span_f1", "pd_acc"] {
        assert!((metrics[key].as_f64().unwrap() - last["metrics"][key].as_f64().unwrap()).abs() < 0.05);
    }
    assert!(metrics["pbp_f1"]["PPH"].is_number());
}

#[test]
fn predict_accepts_text_and_tokens() {
    let d = workspace();
    std::fs::write(
        d.join("in.jsonl"),
        "{\"text\": \"the lead pipe costs $5\"}\n\n{\"tokens\": [\"close\", \"the\", \"city\", \"on\", \"june\", \"5\"]}\n",
    )
    .unwrap();
    ok(d, &["predict", "--ckpt", "fe.ckpt", "--in", "in.jsonl", "--out", "out.jsonl"]);
    let out = jsonl(&d.join("out.jsonl"));
    assert_eq!(out.len(), 2);
    for o in &out {
        let spoken = o["spoken"].as_array().unwrap();
        assert_eq!(o["boundaries"].as_array().unwrap().len(), spoken.len());
        assert_eq!(o["tn_tags"].as_array().unwrap().len(), o["tokens"].as_array().unwrap().len());
    }
    assert_eq!(out[0]["tokens"][1], "lead");
    assert!(out[0]["polyphones"].as_array().unwrap().iter().any(|p| p["position"] == 1));

    std::fs::write(d.join("bad.jsonl"), "{\"text\": \"ok\"}\n{\"words\": []}\n").unwrap();
    let err = fails(d, &["predict", "--ckpt", "fe.ckpt", "--in", "bad.jsonl", "--out", "o.jsonl"], 2);
    assert!(err.contains("bad.jsonl:2"), "{err}");
}
