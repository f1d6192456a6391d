//! Generate a synthetic workload and print label statistics.
//!
//!     cargo run --release --example generate_workload -- [total] [labeled] [seed] [out.jsonl]

use std::env;
use std::time::Instant;

use rcrank::synthgen::{generate_workload, GenConfig};

fn main() -> rcrank::Result<()> {
    let args: Vec<String> = env::args().collect();
    let arg = |i: usize, d: u64| args.get(i).and_then(|s| s.parse().ok()).unwrap_or(d);
    let cfg = GenConfig {
        total: arg(1, 2000) as usize,
        labeled: arg(2, 500) as usize,
        ..GenConfig::default()
    };
    let seed = arg(3, 42);
    let start = Instant::now();
    let ds = generate_workload(&cfg, seed)?;
    println!("{} records in {:.2?}", ds.len(), start.elapsed());

    let r = ds.r();
    let mut top1 = vec![0usize; r];
    let mut valid = vec![0usize; r];
    let mut none_valid = 0;
    let mut n_valid_hist = vec![0usize; r + 1];
    let mut sql_len = 0usize;
    let mut plan_len = 0usize;
    let labeled: Vec<_> = ds.labeled().collect();
    for rec in &labeled {
        let y = rec.impacts.as_ref().unwrap();
        let nv = y.iter().filter(|&&v| v >= cfg.epsilon).count();
        n_valid_hist[nv] += 1;
        if nv == 0 {
            none_valid += 1;
        } else {
            let best = (0..r).max_by(|&a, &b| y[a].total_cmp(&y[b])).unwrap();
            top1[best] += 1;
        }
        for j in 0..r {
            if y[j] >= cfg.epsilon {
                valid[j] += 1;
            }
        }
        sql_len += rec.sql.len();
        plan_len += rec.plan.len();
    }
    println!(
        "labeled: {}  without a valid cause: {none_valid}",
        labeled.len()
    );
    println!("valid-count histogram: {n_valid_hist:?}");
    for j in 0..r {
        println!(
            "{:>18}  top1 {:>5}  valid {:>5}",
            ds.catalog[j], top1[j], valid[j]
        );
    }
    println!(
        "mean sql tokens {:.1}, mean plan nodes {:.1}",
        sql_len as f64 / labeled.len().max(1) as f64,
        plan_len as f64 / labeled.len().max(1) as f64
    );
    if let Some(rec) = labeled.first() {
        println!(
            "example: {}\n  impacts {:?}",
            rec.sql_text,
            rec.impacts.as_ref().unwrap()
        );
    }
    if let Some(path) = args.get(4) {
        ds.save(path)?;
        println!("wrote {path}");
    }
    Ok(())
}
