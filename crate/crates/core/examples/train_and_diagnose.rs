//! Generate a workload, pretrain the encoders, train the ranker, report test
//! metrics and diagnose a few held-out slow queries.
//!
//!     cargo run --release --example train_and_diagnose -- [total] [labeled] [pretrain_epochs] [epochs] [seed]

use std::env;
use std::time::Instant;

use rcrank::domain::Split;
use rcrank::evalkit::{pretrain_config_for, pretrain_encoders, MetricOptions};
use rcrank::synthgen::{generate_workload, GenConfig};
use rcrank::trainer::{diagnose, evaluate_model, train, TrainConfig};

fn main() -> rcrank::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args: Vec<String> = env::args().collect();
    let arg = |i: usize, d: u64| args.get(i).and_then(|s| s.parse().ok()).unwrap_or(d);
    let gen = GenConfig {
        total: arg(1, 3000) as usize,
        labeled: arg(2, 600) as usize,
        ..GenConfig::default()
    };
    let seed = arg(5, 1);
    let ds = generate_workload(&gen, seed)?;
    let cfg = TrainConfig {
        epochs: arg(4, 10) as usize,
        seed,
        ..TrainConfig::default()
    };

    let pre_epochs = arg(3, 2) as usize;
    let ckpt = if pre_epochs > 0 {
        let t = Instant::now();
        let c = pretrain_encoders(&ds, &pretrain_config_for(&cfg, pre_epochs, seed))?;
        println!("pretraining: {:.1}s", t.elapsed().as_secs_f64());
        Some(c)
    } else {
        None
    };

    let train_set = ds.subset(Split::Train);
    let out = train(&train_set, &ds.subset(Split::Val), ckpt.as_ref(), &cfg)?;
    let n = train_set.labeled().count();
    println!(
        "training: {:.1}s for {} records x {} epochs ({:.2} ms/record), best epoch {}",
        out.train_seconds,
        n,
        cfg.epochs,
        1000.0 * out.train_seconds / (n * cfg.epochs).max(1) as f64,
        out.best_epoch
    );

    let test = ds.subset(Split::Test);
    let report = evaluate_model(&out.model, &test, &MetricOptions::default())?;
    println!("{}", serde_json::to_string_pretty(&report)?);

    for r in test.labeled().take(3) {
        let d = diagnose(&out.model, r, cfg.epsilon)?;
        let truth: Vec<String> = r
            .impacts
            .as_ref()
            .unwrap()
            .iter()
            .map(|v| format!("{v:.3}"))
            .collect();
        println!("{}  truth [{}]", r.id, truth.join(", "));
        print!("{}", d.table());
    }
    Ok(())
}
