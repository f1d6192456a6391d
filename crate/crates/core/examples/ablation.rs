//! Train the main model variants on a small workload over a few seeds and
//! print the comparison table.
//!
//!     cargo run --release --example ablation -- [total] [labeled] [epochs] [pretrain_epochs] [variants]

use std::env;

use rcrank::evalkit::{run_variants, HarnessConfig, Variant};
use rcrank::synthgen::{generate_workload, GenConfig};
use rcrank::trainer::TrainConfig;

fn main() -> rcrank::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args: Vec<String> = env::args().collect();
    let arg = |i: usize, d: usize| args.get(i).and_then(|s| s.parse().ok()).unwrap_or(d);
    let gen = GenConfig {
        total: arg(1, 1500),
        labeled: arg(2, 400),
        ..GenConfig::default()
    };
    let variants = Variant::parse_list(
        args.get(5)
            .map_or("full,concat,no-gate,mse-only,no-pretrain", String::as_str),
    )?;
    let ds = generate_workload(&gen, 7)?;
    let harness = HarnessConfig {
        train: TrainConfig {
            epochs: arg(3, 8),
            ..TrainConfig::default()
        },
        pretrain_epochs: arg(4, 1),
    };
    let table = run_variants(&ds, &variants, &[1, 2, 3], &harness)?;
    print!("{}", table.to_text());
    for v in variants.iter().skip(1) {
        println!(
            "full beats {:<14} top1 {}/3  tau {}/3  mc_acc {}/3",
            v.name(),
            table.wins("full", &v.name(), "top1_acc"),
            table.wins("full", &v.name(), "tau"),
            table.wins("full", &v.name(), "mc_acc")
        );
    }
    Ok(())
}
