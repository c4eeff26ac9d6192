use std::path::Path;
use std::process::{Command, Output};

fn cgpo(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cgpo")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = cgpo(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const TINY: &str = r#"{
  "n_train": 160, "n_eval": 24, "n_ops_lo": 2, "n_ops_hi": 2,
  "n_layers": 1, "n_heads": 2, "d_model": 16, "d_ff": 32, "context_len": 64,
  "pretrain_epochs": 1, "pretrain_batch_size": 16, "pretrain_lr": 0.003,
  "pretrain_validation": 16, "pretrain_eval_every": 0,
  "max_new_tokens": 24, "rollout_max_tokens": 24, "max_branch_tokens": 24,
  "eval_max_new_tokens": 24, "n_rollouts": 2, "max_prompts": 12,
  "batch_size": 8, "epochs": 1, "lr": 0.0001
}"#;

#[test]
fn full_pipeline_with_cache_hits() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let cfg = root.join("config.json");
    std::fs::write(&cfg, TINY).unwrap();
    let corpus = root.join("corpus");
    let pre = root.join("pretrain");
    let cal = root.join("cal");
    let pairs = root.join("pairs");
    let trained = root.join("trained");
    let eval = root.join("eval");

    ok(&["gen-corpus", "--config", s(&cfg), "--out", s(&corpus)]);
    let train_bytes = std::fs::read(corpus.join("train.jsonl")).unwrap();
    assert_eq!(train_bytes.iter().filter(|&&b| b == b'\n').count(), 160);
    assert!(corpus.join("config.json").exists());
    assert!(ok(&["gen-corpus", "--config", s(&cfg), "--out", s(&corpus)]).contains("cache hit"));
    assert_eq!(std::fs::read(corpus.join("train.jsonl")).unwrap(), train_bytes);

    ok(&["pretrain", "--config", s(&cfg), "--corpus", s(&corpus), "--out", s(&pre)]);
    let model = pre.join("policy.ckpt");
    let train_file = corpus.join("train.jsonl");
    ok(&["calibrate", "--config", s(&cfg), "--model", s(&model), "--prompts", s(&train_file),
        "--q-split", "0.02", "--q-stop", "0.02", "--out", s(&cal)]);
    let cal_file = cal.join("calibration.json");
    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(&cal_file).unwrap()).unwrap();
    assert_eq!(report["q_stop"], 0.02);

    ok(&["build-pairs", "--config", s(&cfg), "--model", s(&model), "--prompts", s(&train_file),
        "--calibration", s(&cal_file), "--k", "4", "--m", "2", "--out", s(&pairs)]);
    let build: serde_json::Value =
        serde_json::from_slice(&std::fs::read(pairs.join("build_report.json")).unwrap()).unwrap();
    let skips: u64 = build["skip_counts"].as_object().unwrap().values().map(|v| v.as_u64().unwrap()).sum();
    assert_eq!(build["n_built"].as_u64().unwrap() + skips, 24);
    let manifest: serde_json::Value =
        serde_json::from_slice(&std::fs::read(pairs.join("build-pairs.manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["stage"], "build-pairs");
    assert!(manifest["outputs"]["pairs.jsonl"].is_string());

    let pair_file = pairs.join("pairs.jsonl");
    if build["n_built"].as_u64().unwrap() > 0 {
        ok(&["inspect", "--pairs", s(&pair_file), "--index", "0"]);
        ok(&["train", "--config", s(&cfg), "--model", s(&model), "--pairs", s(&pair_file),
            "--beta", "0.4", "--out", s(&trained)]);
        assert!(trained.join("metrics.jsonl").exists());
        ok(&["analyze", "tokens", "--config", s(&cfg), "--pairs", s(&pair_file), "--out", s(&root.join("tokens"))]);
    }
    let text = ok(&["eval", "--config", s(&cfg), "--model", s(&model), "--eval-set", s(&corpus.join("eval.jsonl")),
        "--out", s(&eval)]);
    assert!(text.contains("accuracy"));
    let positional = ok(&["analyze", "positional", "--config", s(&cfg), "--model", s(&model),
        "--prompts", s(&train_file), "--out", s(&root.join("positional"))]);
    assert!(positional.contains("two-bucket view"));
}

#[test]
fn failure_classes_map_to_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty.jsonl");
    std::fs::write(&empty, "").unwrap();
    let out = cgpo(&["inspect", "--pairs", s(&empty)]);
    assert_eq!(out.status.code(), Some(3));
    let line: serde_json::Value = serde_json::from_slice(out.stderr.trim_ascii()).unwrap();
    assert_eq!(line["error"], "io");

    let out = cgpo(&["gen-corpus", "--set", "n_ops_lo=9", "--out", s(&dir.path().join("c"))]);
    assert_eq!(out.status.code(), Some(2));

    let out = cgpo(&["eval", "--model", s(&dir.path().join("missing.ckpt")), "--eval-set", s(&empty),
        "--out", s(&dir.path().join("e"))]);
    assert_eq!(out.status.code(), Some(3));
}
