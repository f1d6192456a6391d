//! Compare analytic gradients of the full training loss with central
//! differences, parameter by parameter.
//!
//!     cargo run --release --example gradcheck -- [seed]

use std::env;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rcrank::diffcore::{grad_check_by_param, jitter_biases, Graph};
use rcrank::encoders::EncoderConfig;
use rcrank::fusion::FusionConfig;
use rcrank::synthgen::{generate_workload, GenConfig};
use rcrank::trainer::{graph_loss, ModelConfig, RCRankModel, TrainConfig};

fn main() -> rcrank::Result<()> {
    let seed: u64 = env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(1);
    let ds = generate_workload(
        &GenConfig {
            total: 60,
            labeled: 20,
            ..GenConfig::default()
        },
        seed,
    )?;
    let cfg = ModelConfig {
        encoder: EncoderConfig {
            d: 8,
            sql_layers: 1,
            sql_heads: 2,
            plan_layers: 1,
            plan_heads: 2,
            log_hidden: vec![8],
            kpi_channels: [2, 2],
            dropout: 0.0,
            ..EncoderConfig::default()
        },
        fusion: FusionConfig {
            d: 8,
            blocks: 1,
            dropout: 0.0,
            ..FusionConfig::default()
        },
        ..ModelConfig::default()
    };
    let mut model = RCRankModel::new(
        &cfg,
        ds.catalog.clone(),
        ds.log_norm.clone(),
        ds.kpi_norm.clone(),
        &mut ChaCha8Rng::seed_from_u64(seed),
    )?;
    jitter_biases(&mut model.store, 0.2, seed);
    let records: Vec<_> = ds.labeled().take(2).collect();
    let xs = records
        .iter()
        .map(|r| model.prepare(r))
        .collect::<rcrank::Result<Vec<_>>>()?;
    let ys: Vec<Vec<f64>> = records.iter().map(|r| r.impacts.clone().unwrap()).collect();
    let weights = TrainConfig::default().weights();

    let loss = |g: &mut Graph| {
        let mut total = None;
        for (x, y) in xs.iter().zip(&ys) {
            let yhat = model.forward(g, x)?;
            let (l, _) = graph_loss(g, yhat, y, &weights)?;
            total = Some(match total {
                None => l,
                Some(t) => g.add(t, l)?,
            });
        }
        Ok(total.expect("two records"))
    };
    let errors = grad_check_by_param(&model.store, loss, 1e-3)?;
    let worst = errors.iter().map(|e| e.1).fold(0.0, f64::max);
    for (name, err) in &errors {
        println!("{name:<40} {err:.2e}");
    }
    println!("{} tensors, worst relative error {worst:.2e}", errors.len());
    Ok(())
}
