//! Sensitivity of the ranking metrics to the loss weight lambda.
//!
//!     cargo run --release --example lambda_sweep -- [total] [labeled] [epochs]

use std::env;

use rcrank::evalkit::lambda_sweep;
use rcrank::synthgen::{generate_workload, GenConfig};
use rcrank::trainer::TrainConfig;

fn main() -> rcrank::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args: Vec<String> = env::args().collect();
    let arg = |i: usize, d: usize| args.get(i).and_then(|s| s.parse().ok()).unwrap_or(d);
    let gen = GenConfig {
        total: arg(1, 1200),
        labeled: arg(2, 400),
        ..GenConfig::default()
    };
    let ds = generate_workload(&gen, 3)?;
    let cfg = TrainConfig {
        epochs: arg(3, 8),
        seed: 3,
        ..TrainConfig::default()
    };
    let sweep = lambda_sweep(&ds, &[0.0, 1.0, 3.0, 7.0, 10.0], &cfg, None)?;
    print!("{}", sweep.to_text());
    Ok(())
}
