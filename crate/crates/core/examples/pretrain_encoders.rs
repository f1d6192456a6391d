//! Pretrain the four encoders on a small synthetic workload and show the
//! per-epoch losses and the KPI reconstruction gain.
//!
//!     cargo run --release --example pretrain_encoders -- [total] [labeled] [epochs] [seed]

use std::env;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rcrank::pretrain::{prepare_pool, run_pretraining, PretrainConfig, PretrainModel};
use rcrank::synthgen::{generate_workload, GenConfig};

fn main() -> rcrank::Result<()> {
    env_logger::init();
    let args: Vec<String> = env::args().collect();
    let arg = |i: usize, d: u64| args.get(i).and_then(|s| s.parse().ok()).unwrap_or(d);
    let gen = GenConfig {
        total: arg(1, 1200) as usize,
        labeled: arg(2, 200) as usize,
        ..GenConfig::default()
    };
    let seed = arg(4, 7);
    let ds = generate_workload(&gen, seed)?;
    let pool = ds.pretrain_pool();
    let cfg = PretrainConfig {
        epochs: arg(3, 3) as usize,
        seed,
        ..PretrainConfig::default()
    };

    let start = Instant::now();
    let out = run_pretraining(&pool, &cfg)?;
    let secs = start.elapsed().as_secs_f64();
    println!(
        "{} records x {} epochs in {secs:.1}s ({:.2} ms/sample)",
        pool.len(),
        cfg.epochs,
        1000.0 * secs / (pool.len() * cfg.epochs) as f64
    );
    print!("{}", out.history_csv());

    let inputs: Vec<_> = prepare_pool(&pool, &cfg.encoder)?
        .into_iter()
        .map(|(x, _)| x)
        .take(200)
        .collect();
    let fresh = PretrainModel::new(&cfg, &mut ChaCha8Rng::seed_from_u64(seed))?;
    println!(
        "KPI reconstruction MSE: untrained {:.4}, pretrained {:.4}",
        fresh.kpi_reconstruction_error(&inputs)?,
        out.model.kpi_reconstruction_error(&inputs)?
    );
    Ok(())
}
