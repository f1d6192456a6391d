//! Revise each test query by its top-ranked cause and re-run it in the
//! simulator, comparing a trained model, the oracle and a random ranking.
//!
//!     cargo run --release --example end_to_end -- [total] [labeled] [epochs]

use std::env;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rcrank::domain::{QueryRecord, Split};
use rcrank::evalkit::{end_to_end_improvement, oracle_estimates};
use rcrank::synthgen::{generate_workload, GenConfig};
use rcrank::trainer::{labeled_inputs, train, TrainConfig};
use rcrank::Error;

fn main() -> rcrank::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args: Vec<String> = env::args().collect();
    let arg = |i: usize, d: usize| args.get(i).and_then(|s| s.parse().ok()).unwrap_or(d);
    let gen = GenConfig {
        total: arg(1, 1500),
        labeled: arg(2, 500),
        ..GenConfig::default()
    };
    let ds = generate_workload(&gen, 11)?;
    let sim = ds
        .simulator
        .clone()
        .ok_or_else(|| Error::Unsupported("workload has no simulator".into()))?;
    let cfg = TrainConfig {
        epochs: arg(3, 10),
        seed: 11,
        ..TrainConfig::default()
    };
    let out = train(&ds.subset(Split::Train), &ds.subset(Split::Val), None, &cfg)?;

    let test = ds.subset(Split::Test);
    let records: Vec<QueryRecord> = test.labeled().cloned().collect();
    let (xs, _) = labeled_inputs(&out.model, &test)?;
    let model_est = out.model.estimate_all(&xs)?;
    let oracle_est = oracle_estimates(&records, Some(&sim))?;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let random_est: Vec<Vec<f64>> = records
        .iter()
        .map(|_| (0..ds.r()).map(|_| rng.gen()).collect())
        .collect();

    for (name, est) in [
        ("model", &model_est),
        ("oracle", &oracle_est),
        ("random", &random_est),
    ] {
        let e = end_to_end_improvement(&records, est, &sim)?;
        println!(
            "{name:<7} {:>4} queries  {:>9.2}s -> {:>9.2}s  improvement {:>6.2}%",
            e.n_queries, e.original_s, e.revised_s, e.improvement_pct
        );
    }
    Ok(())
}
