//! Ranking and regression metrics over `n_queries x r` impact matrices.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn check(truth: &[Vec<f64>], est: &[Vec<f64>]) -> Result<()> {
    if truth.len() != est.len() {
        return Err(Error::shape("metrics", &[truth.len()], &[est.len()]));
    }
    for (t, e) in truth.iter().zip(est) {
        if t.len() != e.len() {
            return Err(Error::shape("metrics", &[t.len()], &[e.len()]));
        }
    }
    Ok(())
}

/// Index of the largest value; the lowest index wins ties.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// True when the maximum is attained more than once.
pub fn has_tied_max(v: &[f64]) -> bool {
    let m = v[argmax(v)];
    v.iter().filter(|&&x| x == m).count() > 1
}

/// Indices with `v >= epsilon`, sorted by value descending, lower index first on ties.
pub fn valid_list(v: &[f64], epsilon: f64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..v.len()).filter(|&j| v[j] >= epsilon).collect();
    idx.sort_by(|&a, &b| v[b].total_cmp(&v[a]).then(a.cmp(&b)));
    idx
}

fn has_valid(v: &[f64], epsilon: f64) -> bool {
    v.iter().any(|&x| x >= epsilon)
}

/// Fraction of (query, cause) cells whose validity is estimated correctly.
pub fn v_acc(truth: &[Vec<f64>], est: &[Vec<f64>], epsilon: f64) -> Result<f64> {
    check(truth, est)?;
    let mut hit = 0usize;
    let mut n = 0usize;
    for (t, e) in truth.iter().zip(est) {
        for (a, b) in t.iter().zip(e) {
            hit += usize::from((*a >= epsilon) == (*b >= epsilon));
            n += 1;
        }
    }
    Ok(if n == 0 { 0.0 } else { hit as f64 / n as f64 })
}

/// Queries counted by [`top1_acc`] and [`mc_acc`]: a valid cause exists and,
/// for top-1, the true maximum is unique.
fn top1_counted(t: &[f64], epsilon: f64) -> bool {
    !t.is_empty() && has_valid(t, epsilon) && !has_tied_max(t)
}

/// Share of queries whose estimated top cause is the true one. Queries with
/// no valid cause or a tied true maximum are left out.
pub fn top1_acc(truth: &[Vec<f64>], est: &[Vec<f64>], epsilon: f64) -> Result<f64> {
    check(truth, est)?;
    let mut hit = 0usize;
    let mut n = 0usize;
    for (t, e) in truth.iter().zip(est) {
        if top1_counted(t, epsilon) {
            n += 1;
            hit += usize::from(argmax(t) == argmax(e));
        }
    }
    Ok(if n == 0 { 0.0 } else { hit as f64 / n as f64 })
}

/// Per-query mean squared error, then mean and population standard deviation
/// across queries. With `per_cell` the statistics run over all cells instead.
pub fn mse_with_std(truth: &[Vec<f64>], est: &[Vec<f64>], per_cell: bool) -> Result<(f64, f64)> {
    check(truth, est)?;
    let values: Vec<f64> = if per_cell {
        truth
            .iter()
            .zip(est)
            .flat_map(|(t, e)| t.iter().zip(e).map(|(a, b)| (a - b) * (a - b)))
            .collect()
    } else {
        truth
            .iter()
            .zip(est)
            .filter(|(t, _)| !t.is_empty())
            .map(|(t, e)| {
                t.iter().zip(e).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / t.len() as f64
            })
            .collect()
    };
    if values.is_empty() {
        return Ok((0.0, 0.0));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    Ok((mean, var.sqrt()))
}

/// Share of queries whose estimated valid list matches the true one in both
/// membership and order. Queries without a valid cause are left out.
pub fn mc_acc(truth: &[Vec<f64>], est: &[Vec<f64>], epsilon: f64) -> Result<f64> {
    check(truth, est)?;
    let mut hit = 0usize;
    let mut n = 0usize;
    for (t, e) in truth.iter().zip(est) {
        if has_valid(t, epsilon) {
            n += 1;
            hit += usize::from(valid_list(t, epsilon) == valid_list(e, epsilon));
        }
    }
    Ok(if n == 0 { 0.0 } else { hit as f64 / n as f64 })
}

/// Tau-b of one query, `None` when either ranking is constant.
pub fn tau_b(t: &[f64], e: &[f64]) -> Option<f64> {
    let r = t.len();
    let (mut nc, mut nd, mut na, mut nb) = (0i64, 0i64, 0i64, 0i64);
    for i in 0..r {
        for j in i + 1..r {
            let dt = t[i] - t[j];
            let de = e[i] - e[j];
            if dt == 0.0 {
                na += 1;
            }
            if de == 0.0 {
                nb += 1;
            }
            if dt != 0.0 && de != 0.0 {
                if (dt > 0.0) == (de > 0.0) {
                    nc += 1;
                } else {
                    nd += 1;
                }
            }
        }
    }
    let n0 = (r * r.saturating_sub(1) / 2) as i64;
    let den = ((n0 - na) as f64 * (n0 - nb) as f64).sqrt();
    (den > 0.0).then(|| (nc - nd) as f64 / den)
}

/// Mean per-query tau-b and the number of queries skipped for a zero denominator.
pub fn kendall_tau(truth: &[Vec<f64>], est: &[Vec<f64>]) -> Result<(f64, usize)> {
    check(truth, est)?;
    let mut sum = 0.0;
    let mut n = 0usize;
    let mut skipped = 0usize;
    for (t, e) in truth.iter().zip(est) {
        match tau_b(t, e) {
            Some(v) => {
                sum += v;
                n += 1;
            }
            None => skipped += 1,
        }
    }
    Ok((if n == 0 { 0.0 } else { sum / n as f64 }, skipped))
}

/// Mean true impact of the estimated top cause.
pub fn top1_ir(truth: &[Vec<f64>], est: &[Vec<f64>]) -> Result<f64> {
    check(truth, est)?;
    let vals: Vec<f64> = truth
        .iter()
        .zip(est)
        .filter(|(t, _)| !t.is_empty())
        .map(|(t, e)| t[argmax(e)])
        .collect();
    Ok(if vals.is_empty() {
        0.0
    } else {
        vals.iter().sum::<f64>() / vals.len() as f64
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub train_s_per_epoch: Option<f64>,
    pub inference_s_per_query: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub v_acc: f64,
    pub top1_acc: f64,
    pub mse_mean: f64,
    pub mse_std: f64,
    pub mc_acc: f64,
    pub tau: f64,
    pub top1_ir: f64,
    pub n_queries: usize,
    /// Queries without a valid true cause (left out of Top1-ACC and MC-ACC).
    pub n_no_valid: usize,
    /// Queries with a valid cause but a tied true maximum (left out of Top1-ACC).
    pub n_tied_top1: usize,
    /// Queries with a constant truth or estimate ranking (left out of Tau).
    pub n_tau_skipped: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timing: Option<Timing>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricOptions {
    pub epsilon: f64,
    pub mse_per_cell: bool,
}

impl Default for MetricOptions {
    fn default() -> Self {
        MetricOptions {
            epsilon: 0.10,
            mse_per_cell: false,
        }
    }
}

impl MetricsReport {
    pub fn compute(truth: &[Vec<f64>], est: &[Vec<f64>], opts: &MetricOptions) -> Result<Self> {
        let eps = opts.epsilon;
        let (mse_mean, mse_std) = mse_with_std(truth, est, opts.mse_per_cell)?;
        let (tau, n_tau_skipped) = kendall_tau(truth, est)?;
        Ok(MetricsReport {
            v_acc: v_acc(truth, est, eps)?,
            top1_acc: top1_acc(truth, est, eps)?,
            mse_mean,
            mse_std,
            mc_acc: mc_acc(truth, est, eps)?,
            tau,
            top1_ir: top1_ir(truth, est)?,
            n_queries: truth.len(),
            n_no_valid: truth.iter().filter(|t| !has_valid(t, eps)).count(),
            n_tied_top1: truth
                .iter()
                .filter(|t| !t.is_empty() && has_valid(t, eps) && has_tied_max(t))
                .count(),
            n_tau_skipped,
            timing: None,
        })
    }

    /// Named metric values in a fixed order.
    pub fn values(&self) -> [(&'static str, f64); 7] {
        [
            ("v_acc", self.v_acc),
            ("top1_acc", self.top1_acc),
            ("mse_mean", self.mse_mean),
            ("mse_std", self.mse_std),
            ("mc_acc", self.mc_acc),
            ("tau", self.tau),
            ("top1_ir", self.top1_ir),
        ]
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.values()
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(_, v)| *v)
    }

    pub fn csv_header() -> &'static str {
        "v_acc,top1_acc,mse_mean,mse_std,mc_acc,tau,top1_ir,n_queries,n_no_valid,n_tied_top1,n_tau_skipped"
    }

    pub fn csv_row(&self) -> String {
        let mut s: Vec<String> = self
            .values()
            .iter()
            .map(|(_, v)| format!("{v:.6}"))
            .collect();
        for n in [
            self.n_queries,
            self.n_no_valid,
            self.n_tied_top1,
            self.n_tau_skipped,
        ] {
            s.push(n.to_string());
        }
        s.join(",")
    }
}
