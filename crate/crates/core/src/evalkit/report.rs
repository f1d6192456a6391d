use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::metrics::MetricsReport;

const METRICS: [&str; 7] = [
    "v_acc", "top1_acc", "mse_mean", "mse_std", "mc_acc", "tau", "top1_ir",
];

fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariantRow {
    pub name: String,
    /// One report per seed, in seed order.
    pub runs: Vec<MetricsReport>,
}

impl VariantRow {
    /// Mean and population standard deviation of a metric across seeds.
    pub fn summary(&self, metric: &str) -> (f64, f64) {
        let v: Vec<f64> = self.runs.iter().filter_map(|r| r.get(metric)).collect();
        mean_std(&v)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariantTable {
    pub seeds: Vec<u64>,
    pub rows: Vec<VariantRow>,
}

impl VariantTable {
    pub fn new(rows: Vec<(String, Vec<MetricsReport>)>, seeds: Vec<u64>) -> Self {
        VariantTable {
            seeds,
            rows: rows
                .into_iter()
                .map(|(name, runs)| VariantRow { name, runs })
                .collect(),
        }
    }

    pub fn row(&self, name: &str) -> Option<&VariantRow> {
        self.rows.iter().find(|r| r.name == name)
    }

    /// Seeds on which variant `a` scores strictly better than `b` on `metric`
    /// (lower is better for the MSE columns).
    pub fn wins(&self, a: &str, b: &str, metric: &str) -> usize {
        let (Some(ra), Some(rb)) = (self.row(a), self.row(b)) else {
            return 0;
        };
        let lower = metric.starts_with("mse");
        ra.runs
            .iter()
            .zip(&rb.runs)
            .filter(|(x, y)| {
                let (x, y) = (
                    x.get(metric).unwrap_or(f64::NAN),
                    y.get(metric).unwrap_or(f64::NAN),
                );
                if lower {
                    x < y
                } else {
                    x > y
                }
            })
            .count()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("table serialises")
    }

    /// Long format: one line per (variant, seed).
    pub fn to_csv(&self) -> String {
        let mut s = format!("variant,seed,{}\n", MetricsReport::csv_header());
        for row in &self.rows {
            for (seed, r) in self.seeds.iter().zip(&row.runs) {
                let _ = writeln!(s, "{},{},{}", row.name, seed, r.csv_row());
            }
        }
        s
    }

    /// Aligned `mean±std` table.
    pub fn to_text(&self) -> String {
        let width = self
            .rows
            .iter()
            .map(|r| r.name.len())
            .max()
            .unwrap_or(7)
            .max(7);
        let mut s = format!("{:<width$}", "variant");
        for m in METRICS {
            let _ = write!(s, "  {m:>17}");
        }
        s.push('\n');
        for row in &self.rows {
            let _ = write!(s, "{:<width$}", row.name);
            for m in METRICS {
                let (mean, std) = row.summary(m);
                let _ = write!(s, "  {:>17}", format!("{mean:.4}±{std:.4}"));
            }
            s.push('\n');
        }
        s
    }

    /// Horizontal bar chart of one metric's mean per variant.
    pub fn to_svg(&self, metric: &str) -> String {
        let bar_h = 22.0;
        let label_w = 140.0;
        let plot_w = 360.0;
        let h = 40.0 + bar_h * self.rows.len() as f64;
        let means: Vec<f64> = self.rows.iter().map(|r| r.summary(metric).0).collect();
        let max = means.iter().fold(0.0f64, |a, &b| a.max(b.abs())).max(1e-12);
        let mut s = format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{}\" height=\"{h}\" font-family=\"monospace\" font-size=\"12\">\n",
            label_w + plot_w + 80.0
        );
        let _ = writeln!(s, "<text x=\"4\" y=\"16\">{metric}</text>");
        for (k, (row, m)) in self.rows.iter().zip(&means).enumerate() {
            let y = 28.0 + bar_h * k as f64;
            let w = plot_w * m.abs() / max;
            let _ = writeln!(s, "<text x=\"4\" y=\"{:.1}\">{}</text>", y + 14.0, row.name);
            let _ = writeln!(
                s,
                "<rect x=\"{label_w}\" y=\"{y:.1}\" width=\"{w:.1}\" height=\"{:.1}\" fill=\"#4a7bb7\"/>",
                bar_h - 4.0
            );
            let _ = writeln!(
                s,
                "<text x=\"{:.1}\" y=\"{:.1}\">{m:.4}</text>",
                label_w + w + 6.0,
                y + 14.0
            );
        }
        s.push_str("</svg>\n");
        s
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LambdaRow {
    pub lambda: f64,
    pub report: MetricsReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LambdaSweep {
    pub seed: u64,
    pub rows: Vec<LambdaRow>,
}

impl LambdaSweep {
    /// Largest minus smallest value of `metric` across the sweep.
    pub fn spread(&self, metric: &str) -> f64 {
        let v: Vec<f64> = self
            .rows
            .iter()
            .filter_map(|r| r.report.get(metric))
            .collect();
        let hi = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lo = v.iter().cloned().fold(f64::INFINITY, f64::min);
        if v.is_empty() {
            0.0
        } else {
            hi - lo
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("sweep serialises")
    }

    pub fn to_csv(&self) -> String {
        let mut s = format!("lambda,{}\n", MetricsReport::csv_header());
        for r in &self.rows {
            let _ = writeln!(s, "{},{}", r.lambda, r.report.csv_row());
        }
        s
    }

    pub fn to_text(&self) -> String {
        let mut s = String::from("lambda");
        for m in METRICS {
            let _ = write!(s, "  {m:>9}");
        }
        s.push('\n');
        for r in &self.rows {
            let _ = write!(s, "{:<6}", r.lambda);
            for m in METRICS {
                let _ = write!(s, "  {:>9.4}", r.report.get(m).unwrap_or(f64::NAN));
            }
            s.push('\n');
        }
        for m in ["top1_acc", "tau", "v_acc"] {
            let _ = writeln!(s, "spread {m}: {:.4}", self.spread(m));
        }
        s
    }
}
