//! End-to-end tests of the `drdg` binary: run directory contents, config
//! echo and provenance, rerun determinism, eval/ablate/plot outputs.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn drdg(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_drdg"))
        .args(args)
        .current_dir(dir)
        .env_remove("DRDG_RUN_ROOT")
        .output()
        .expect("binary runs")
}

fn assert_ok(out: &Output) {
    assert!(
        out.status.success(),
        "stdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

const TINY_TOML: &str = r#"
[train]
steps = 24
seed = 7
eval_every = 12
n_dom = 4
lambda1 = 10.0

[train.arch]
image_hw = [8, 8]
enc_channels = [4, 4, 4]
head_hidden = 4
frm_hidden = 4
dep_hidden = 6
depth_hw = [4, 4]
num_domains = 3

[data]
n_per_domain = 16
n_holdout = 16

[data.gen]
image_hw = [8, 8]
depth_hw = [4, 4]
"#;

fn setup() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("tiny.toml"), TINY_TOML).unwrap();
    dir
}

#[test]
fn train_writes_run_directory_and_echo() {
    let dir = setup();
    let out = drdg(
        &["train", "--config", "tiny.toml", "--out", "run"],
        dir.path(),
    );
    assert_ok(&out);
    let run = dir.path().join("run");
    for f in [
        "config.json",
        "config_sources.json",
        "runlog.jsonl",
        "summary.json",
        "checkpoints/final.bin",
        "checkpoints/final.json",
    ] {
        assert!(run.join(f).exists(), "missing {}", f);
    }

    // the echo re-serializes byte-identically
    let echo = fs::read(run.join("config.json")).unwrap();
    let parsed: drdg_core::trainer::RunConfig =
        serde_json::from_slice(&echo).unwrap();
    let mut again = serde_json::to_vec_pretty(&parsed).unwrap();
    again.push(b'\n');
    assert_eq!(echo, again, "config echo must be byte-stable");

    // provenance: file-provided vs defaulted vs cli-overridden fields
    let sources: std::collections::BTreeMap<String, String> =
        serde_json::from_str(&fs::read_to_string(run.join("config_sources.json")).unwrap())
            .unwrap();
    assert_eq!(sources["train.lambda1"], "file");
    assert_eq!(sources["train.lambda2"], "default");
    assert_eq!(sources["train.steps"], "file");

    let out2 = drdg(
        &[
            "train",
            "--config",
            "tiny.toml",
            "--lambda2",
            "0.2",
            "--out",
            "run2",
        ],
        dir.path(),
    );
    assert_ok(&out2);
    let sources2: std::collections::BTreeMap<String, String> = serde_json::from_str(
        &fs::read_to_string(dir.path().join("run2/config_sources.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(sources2["train.lambda2"], "cli");
}

#[test]
fn rerun_with_same_seed_is_identical() {
    let dir = setup();
    for name in ["a", "b"] {
        let out = drdg(
            &[
                "train",
                "--config",
                "tiny.toml",
                "--seed",
                "9",
                "--out",
                name,
            ],
            dir.path(),
        );
        assert_ok(&out);
    }
    for f in ["metrics/scores_step000012.csv", "metrics/scores_step000024.csv"] {
        let a = fs::read(dir.path().join("a").join(f)).unwrap();
        let b = fs::read(dir.path().join("b").join(f)).unwrap();
        assert_eq!(a, b, "{} differs between identical reruns", f);
    }
    let strip_wall = |path: &Path| -> Vec<String> {
        fs::read_to_string(path)
            .unwrap()
            .lines()
            .map(|l| {
                let mut v: serde_json::Value = serde_json::from_str(l).unwrap();
                v["wall_ms"] = 0.0.into();
                v.to_string()
            })
            .collect()
    };
    assert_eq!(
        strip_wall(&dir.path().join("a/runlog.jsonl")),
        strip_wall(&dir.path().join("b/runlog.jsonl"))
    );
}

#[test]
fn schedule_flags_shape_the_run_log() {
    let dir = setup();
    let out = drdg(
        &[
            "train",
            "--config",
            "tiny.toml",
            "--steps",
            "10",
            "--K",
            "5",
            "--out",
            "run",
        ],
        dir.path(),
    );
    assert_ok(&out);
    let log = fs::read_to_string(dir.path().join("run/runlog.jsonl")).unwrap();
    let types: Vec<String> = log
        .lines()
        .map(|l| {
            serde_json::from_str::<serde_json::Value>(l).unwrap()["step_type"]
                .as_str()
                .unwrap()
                .to_string()
        })
        .collect();
    assert_eq!(
        types,
        vec![
            "DIS", "SRM_MAIN", "DIS", "SRM_MAIN", "FRM", "SRM_MAIN", "DIS", "SRM_MAIN", "DIS",
            "FRM"
        ]
    );
}

#[test]
fn eval_untrained_model_is_chance_with_monotone_roc() {
    let dir = setup();
    // a fresh (zero-head) model checkpoint, no training
    let arch: drdg_core::trainer::RunConfig = {
        let t: toml::Value = toml::from_str(TINY_TOML).unwrap();
        serde_json::from_value(serde_json::to_value(t).unwrap()).unwrap()
    };
    let state = drdg_core::model::ModelState::new(arch.train.arch.clone(), 1).unwrap();
    drdg_core::model::save_checkpoint(
        &state,
        &dir.path().join("fresh"),
        serde_json::json!({"frm_enabled": true}),
    )
    .unwrap();

    let out = drdg(
        &[
            "eval",
            "--config",
            "tiny.toml",
            "--checkpoint",
            "fresh",
            "--out",
            "ev",
        ],
        dir.path(),
    );
    assert_ok(&out);
    let metrics: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("ev/metrics.json")).unwrap())
            .unwrap();
    let auc = metrics["auc"].as_f64().unwrap();
    // constant 0.5 scores: every pair ties, AUC is exactly one half
    assert!((auc - 0.5).abs() < 0.05, "auc = {}", auc);

    let roc = fs::read_to_string(dir.path().join("ev/roc.csv")).unwrap();
    let fars: Vec<f64> = roc
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
        .collect();
    assert!(fars.windows(2).all(|w| w[1] <= w[0]), "FAR must be non-increasing");

    // same checkpoint, second invocation → identical outputs
    let out2 = drdg(
        &[
            "eval",
            "--config",
            "tiny.toml",
            "--checkpoint",
            "fresh",
            "--out",
            "ev2",
        ],
        dir.path(),
    );
    assert_ok(&out2);
    for f in ["metrics.csv", "roc.csv", "scores.csv"] {
        assert_eq!(
            fs::read(dir.path().join("ev").join(f)).unwrap(),
            fs::read(dir.path().join("ev2").join(f)).unwrap(),
            "{} differs across invocations",
            f
        );
    }
}

#[test]
fn eval_rejects_shape_incompatible_checkpoint() {
    let dir = setup();
    let mut other = drdg_core::model::ArchConfig::default();
    other.image_hw = (32, 32);
    let state = drdg_core::model::ModelState::new(other, 1).unwrap();
    drdg_core::model::save_checkpoint(&state, &dir.path().join("big"), serde_json::Value::Null)
        .unwrap();
    let out = drdg(
        &[
            "eval",
            "--config",
            "tiny.toml",
            "--checkpoint",
            "big",
            "--out",
            "ev",
        ],
        dir.path(),
    );
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("does not match"), "stderr: {}", stderr);
}

#[test]
fn ablate_table_layout_and_variant_validation() {
    let dir = setup();
    let out = drdg(
        &[
            "ablate",
            "--config",
            "tiny.toml",
            "--variants",
            "DRDG,Baseline",
            "--seeds",
            "2",
            "--out",
            "abl",
        ],
        dir.path(),
    );
    assert_ok(&out);
    let csv = fs::read_to_string(dir.path().join("abl/ablation.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "Method,HTER,AUC");
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("DRDG,"));
    assert!(lines[2].starts_with("Baseline,"));

    let bad = drdg(
        &[
            "ablate",
            "--config",
            "tiny.toml",
            "--variants",
            "NotAVariant",
            "--out",
            "abl2",
        ],
        dir.path(),
    );
    assert!(!bad.status.success());
    let stderr = String::from_utf8_lossy(&bad.stderr);
    assert!(stderr.contains("Baseline_SRM_reverse"), "stderr: {}", stderr);
}

#[test]
fn plot_kinds_with_partial_inputs() {
    let dir = setup();
    // log_weights off → weight_hist must be skipped, the rest produced
    let config = TINY_TOML.replace("lambda1 = 10.0", "lambda1 = 10.0\nlog_weights = false");
    fs::write(dir.path().join("nolw.toml"), config).unwrap();
    let out = drdg(
        &["train", "--config", "nolw.toml", "--out", "run"],
        dir.path(),
    );
    assert_ok(&out);
    let out = drdg(&["plot", "--run", "run"], dir.path());
    assert_ok(&out);
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(
        stderr.contains("skipped weight_hist"),
        "expected a skip warning, got: {}",
        stderr
    );
    let plots = dir.path().join("run/plots");
    assert!(plots.join("feature_scatter.svg").exists());
    assert!(plots.join("channel_attn.svg").exists());
    assert!(plots.join("roc_step000012.svg").exists());
    assert!(!plots.join("weight_hist.svg").exists());

    // explicit kind subset
    let out = drdg(
        &["plot", "--run", "run", "--kinds", "roc"],
        dir.path(),
    );
    assert_ok(&out);

    let bad = drdg(&["plot", "--run", "run", "--kinds", "sparkles"], dir.path());
    assert!(!bad.status.success());
}

#[test]
fn invalid_config_fails_with_field_message() {
    let dir = setup();
    let bad = TINY_TOML.replace("n_dom = 4", "n_dom = 3");
    fs::write(dir.path().join("bad.toml"), bad).unwrap();
    let out = drdg(
        &["train", "--config", "bad.toml", "--out", "run"],
        dir.path(),
    );
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("n_dom"), "stderr: {}", stderr);
}
