use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rcrank::diffcore::Tensor;
use rcrank::domain::Dataset;
use rcrank::encoders::EncoderConfig;
use rcrank::fusion::FusionConfig;
use rcrank::trainer::{ModelConfig, RCRankModel};
use serde_json::Value;
use tempfile::TempDir;

const SMALL: &str = "total = 200\nlabeled = 80\nd = 8\nsql_layers = 1\nsql_heads = 2\nplan_layers = 1\nplan_heads = 2\n\
fusion_blocks = 1\nepochs = 1\nbatch = 16\npretrain_epochs = 1\npretrain_batch = 32\n";

fn rcrank(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rcrank"))
        .current_dir(dir)
        .env_remove("RCRANK_THREADS")
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn setup() -> TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("small.toml"), SMALL).unwrap();
    let o = rcrank(
        dir.path(),
        &[
            "gen-data",
            "--config",
            "small.toml",
            "--seed",
            "42",
            "--out",
            "data.jsonl",
        ],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    dir
}

#[test]
fn gen_data_is_deterministic_and_echoes_config() {
    let dir = setup();
    let o = rcrank(
        dir.path(),
        &[
            "gen-data",
            "--config",
            "small.toml",
            "--seed",
            "42",
            "--out",
            "again.jsonl",
        ],
    );
    assert!(o.status.success());
    let a = fs::read(dir.path().join("data.jsonl")).unwrap();
    let b = fs::read(dir.path().join("again.jsonl")).unwrap();
    assert_eq!(a, b);
    let echo = fs::read_to_string(dir.path().join("data.jsonl.config.toml")).unwrap();
    assert!(echo.contains("seed = 42"));
    assert!(echo.contains("total = 200"));
}

#[test]
fn oracle_eval_is_perfect() {
    let dir = setup();
    let o = rcrank(
        dir.path(),
        &[
            "eval",
            "--model",
            "oracle",
            "--data",
            "data.jsonl",
            "--report",
            "oracle.json",
        ],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let r: Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("oracle.json")).unwrap()).unwrap();
    for k in ["v_acc", "top1_acc", "mc_acc"] {
        assert_eq!(r[k].as_f64(), Some(1.0), "{k}");
    }
    assert_eq!(r["mse_mean"].as_f64(), Some(0.0));
    assert!(r.get("timing").map_or(true, Value::is_null));
    let csv = fs::read_to_string(dir.path().join("oracle.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2);
}

#[test]
fn pretrain_train_eval_diagnose_pipeline() {
    let dir = setup();
    let p = dir.path();
    let o = rcrank(
        p,
        &[
            "pretrain",
            "--config",
            "small.toml",
            "--data",
            "data.jsonl",
            "--out",
            "enc.ckpt",
        ],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let o = rcrank(
        p,
        &[
            "train",
            "--config",
            "small.toml",
            "--data",
            "data.jsonl",
            "--pretrained",
            "enc.ckpt",
            "--out",
            "m.ckpt",
        ],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(p.join("m.ckpt.config.toml").exists());
    let o = rcrank(
        p,
        &[
            "eval",
            "--model",
            "m.ckpt",
            "--data",
            "data.jsonl",
            "--report",
            "r.json",
            "--timing",
        ],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let r: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert!(r["timing"]["inference_s_per_query"].as_f64().unwrap() >= 0.0);

    let ds = Dataset::load(p.join("data.jsonl")).unwrap();
    let line = serde_json::to_string(&ds.records[0].to_json()).unwrap();
    fs::write(p.join("q.json"), line).unwrap();
    let o = rcrank(p, &["diagnose", "--model", "m.ckpt", "--query", "q.json"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let first = stdout(&o).lines().next().unwrap().to_string();
    let causes: Vec<Value> = serde_json::from_str(&first).unwrap();
    for w in causes.windows(2) {
        assert!(w[0]["impact"].as_f64() >= w[1]["impact"].as_f64());
    }
}

#[test]
fn diagnose_without_valid_causes_prints_empty_list() {
    let dir = setup();
    let p = dir.path();
    let ds = Dataset::load(p.join("data.jsonl")).unwrap();
    let cfg = ModelConfig {
        encoder: EncoderConfig {
            d: 8,
            sql_heads: 2,
            plan_heads: 2,
            log_hidden: vec![8],
            ..EncoderConfig::default()
        },
        fusion: FusionConfig {
            d: 8,
            blocks: 1,
            ..FusionConfig::default()
        },
        ..ModelConfig::default()
    };
    let mut model = RCRankModel::new(
        &cfg,
        ds.catalog.clone(),
        ds.log_norm.clone(),
        ds.kpi_norm.clone(),
        &mut ChaCha8Rng::seed_from_u64(3),
    )
    .unwrap();
    let w = model
        .store
        .by_name("head/1/w")
        .unwrap()
        .value
        .shape()
        .to_vec();
    model
        .store
        .set_value("head/1/w", Tensor::zeros(&w))
        .unwrap();
    model
        .store
        .set_value("head/1/b", Tensor::row(&[-0.2]))
        .unwrap();
    model
        .checkpoint(Value::Null)
        .save(&p.join("neg.ckpt"))
        .unwrap();
    fs::write(
        p.join("q.json"),
        serde_json::to_string(&ds.records[0].to_json()).unwrap(),
    )
    .unwrap();

    let o = rcrank(p, &["diagnose", "--model", "neg.ckpt", "--query", "q.json"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(stdout(&o).lines().next(), Some("[]"));
}

#[test]
fn errors_map_to_exit_codes() {
    let dir = setup();
    let p = dir.path();

    let o = rcrank(
        p,
        &[
            "eval",
            "--model",
            "missing.ckpt",
            "--data",
            "data.jsonl",
            "--report",
            "x.json",
        ],
    );
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).starts_with("error: not_found:"));

    let o = rcrank(p, &["train", "--data", "nothing.jsonl", "--out", "x"]);
    assert_eq!(o.status.code(), Some(2));

    fs::write(p.join("bad.toml"), "epochs = 1\nlearnin_rate = 0.1\n").unwrap();
    let o = rcrank(
        p,
        &[
            "train",
            "--config",
            "bad.toml",
            "--data",
            "data.jsonl",
            "--out",
            "x",
        ],
    );
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).starts_with("error: invalid_config:"));
    assert_eq!(stderr(&o).trim_end().lines().count(), 1);

    let o = rcrank(
        p,
        &[
            "train",
            "--config",
            "small.toml",
            "--set",
            "lambda=-1",
            "--data",
            "data.jsonl",
            "--out",
            "x",
        ],
    );
    assert_eq!(o.status.code(), Some(3));

    fs::write(p.join("garbage.json"), "{not json").unwrap();
    let o = rcrank(
        p,
        &[
            "eval",
            "--model",
            "oracle",
            "--data",
            "garbage.json",
            "--report",
            "x.json",
        ],
    );
    assert_eq!(o.status.code(), Some(3));

    let o = rcrank(p, &["--threads", "0", "gen-data", "--out", "t.jsonl"]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn thread_count_comes_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("small.toml"), SMALL).unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_rcrank"))
        .current_dir(dir.path())
        .env("RCRANK_THREADS", "two")
        .args(["gen-data", "--config", "small.toml", "--out", "d.jsonl"])
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(3));
    let o = Command::new(env!("CARGO_BIN_EXE_rcrank"))
        .current_dir(dir.path())
        .env("RCRANK_THREADS", "2")
        .args(["gen-data", "--config", "small.toml", "--out", "d.jsonl"])
        .output()
        .unwrap();
    assert!(o.status.success());
    let echo = fs::read_to_string(dir.path().join("d.jsonl.config.toml")).unwrap();
    assert!(echo.contains("threads = 2"));
}

#[test]
fn ablate_and_sweep_write_tables() {
    let dir = setup();
    let p = dir.path();
    let o = rcrank(
        p,
        &[
            "ablate",
            "--config",
            "small.toml",
            "--data",
            "data.jsonl",
            "--variants",
            "full,concat",
            "--seeds",
            "1",
            "--out",
            "abl",
        ],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("concat"));
    for f in [
        "ablation.json",
        "ablation.csv",
        "ablation_top1_acc.svg",
        "run.config.toml",
    ] {
        assert!(p.join("abl").join(f).exists(), "{f}");
    }
    let o = rcrank(
        p,
        &[
            "sweep-lambda",
            "--config",
            "small.toml",
            "--set",
            "pretrain_epochs=0",
            "--data",
            "data.jsonl",
            "--values",
            "0,7",
            "--out",
            "sw",
        ],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = fs::read_to_string(p.join("sw/lambda.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
    let o = rcrank(
        p,
        &["ablate", "--data", "data.jsonl", "--variants", "fancy"],
    );
    assert_eq!(o.status.code(), Some(3));
}
