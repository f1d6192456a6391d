//! Score hand-written estimates against truth and print every metric.
//!
//!     cargo run --example metrics

use rcrank::evalkit::{kendall_tau, valid_list, MetricOptions, MetricsReport};

fn main() -> rcrank::Result<()> {
    let truth = vec![
        vec![0.55, 0.12, 0.02, 0.00, 0.31],
        vec![0.04, 0.08, 0.41, 0.19, 0.00],
        vec![0.03, 0.05, 0.01, 0.00, 0.07],
        vec![0.22, 0.26, 0.00, 0.15, 0.01],
    ];
    let est = vec![
        vec![0.48, 0.15, 0.05, 0.01, 0.36],
        vec![0.09, 0.02, 0.33, 0.24, 0.04],
        vec![0.06, 0.12, 0.00, 0.01, 0.03],
        vec![0.27, 0.21, 0.02, 0.11, 0.00],
    ];
    let opts = MetricOptions::default();
    for (k, (t, e)) in truth.iter().zip(&est).enumerate() {
        println!(
            "query {k}: valid truth {:?} estimate {:?}",
            valid_list(t, opts.epsilon),
            valid_list(e, opts.epsilon)
        );
    }
    let (tau, skipped) = kendall_tau(&truth, &est)?;
    println!("mean tau {tau:.4} ({skipped} skipped)");

    let report = MetricsReport::compute(&truth, &est, &opts)?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    println!("{}\n{}", MetricsReport::csv_header(), report.csv_row());
    Ok(())
}
