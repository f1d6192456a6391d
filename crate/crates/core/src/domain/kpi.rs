//! Instance KPI time series.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_Q: usize = 6;
pub const DEFAULT_T: usize = 60;

pub const KPI_CHANNELS: [&str; DEFAULT_Q] = [
    "cpu_pct",
    "mem_pct",
    "io_count",
    "net_bytes",
    "active_connections",
    "cache_hit_pct",
];

/// Channels that hold percentages and must stay within `[0, 100]`.
pub const PERCENT_CHANNELS: [usize; 3] = [0, 1, 5];

/// `q x t` matrix, one row per channel.
#[derive(Clone, Debug, PartialEq)]
pub struct KpiMatrix {
    q: usize,
    t: usize,
    data: Vec<f64>,
}

impl KpiMatrix {
    pub fn new(q: usize, t: usize, data: Vec<f64>) -> Result<Self> {
        if q == 0 || t == 0 || data.len() != q * t {
            return Err(Error::shape("kpi", &[q, t], &[data.len()]));
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidInput("non-finite KPI value".into()));
        }
        if q == DEFAULT_Q {
            for &c in &PERCENT_CHANNELS {
                if data[c * t..(c + 1) * t]
                    .iter()
                    .any(|&x| !(0.0..=100.0).contains(&x))
                {
                    return Err(Error::InvalidInput(format!(
                        "KPI channel `{}` outside [0, 100]",
                        KPI_CHANNELS[c]
                    )));
                }
            }
        }
        Ok(KpiMatrix { q, t, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let q = rows.len();
        let t = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != t) {
            return Err(Error::InvalidInput("ragged KPI rows".into()));
        }
        Self::new(q, t, rows.concat())
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn t(&self) -> usize {
        self.t
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        &self.data[c * self.t..(c + 1) * self.t]
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.q).map(|c| self.channel(c).to_vec()).collect()
    }
}

/// Per-channel mean and standard deviation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KpiNorm {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl KpiNorm {
    pub fn identity(q: usize) -> Self {
        KpiNorm {
            mean: vec![0.0; q],
            std: vec![1.0; q],
        }
    }

    pub fn fit<'a>(q: usize, kpis: impl IntoIterator<Item = &'a KpiMatrix>) -> Self {
        let kpis: Vec<&KpiMatrix> = kpis.into_iter().collect();
        if kpis.is_empty() {
            return Self::identity(q);
        }
        let mut mean = vec![0.0; q];
        let mut count = 0.0;
        for k in &kpis {
            for (c, m) in mean.iter_mut().enumerate() {
                *m += k.channel(c).iter().sum::<f64>();
            }
            count += k.t as f64;
        }
        mean.iter_mut().for_each(|m| *m /= count);
        let mut var = vec![0.0; q];
        for k in &kpis {
            for (c, v) in var.iter_mut().enumerate() {
                *v += k
                    .channel(c)
                    .iter()
                    .map(|x| (x - mean[c]).powi(2))
                    .sum::<f64>();
            }
        }
        let std = var.iter().map(|v| (v / count).sqrt()).collect();
        KpiNorm { mean, std }
    }

    /// Standardised copy of `kpi`, row-major.
    pub fn apply(&self, kpi: &KpiMatrix) -> Result<Vec<f64>> {
        if kpi.q != self.mean.len() {
            return Err(Error::shape("kpi_norm", &[self.mean.len()], &[kpi.q]));
        }
        let mut out = kpi.data.clone();
        for c in 0..kpi.q {
            let s = self.std[c].max(super::log::STD_FLOOR);
            for x in &mut out[c * kpi.t..(c + 1) * kpi.t] {
                *x = (*x - self.mean[c]) / s;
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn percent_bounds() {
        let mut rows = vec![vec![50.0; 4]; DEFAULT_Q];
        assert!(KpiMatrix::from_rows(&rows).is_ok());
        rows[1][2] = 101.0;
        assert!(KpiMatrix::from_rows(&rows).is_err());
        rows[1][2] = 50.0;
        rows[3][0] = 1e9;
        assert!(KpiMatrix::from_rows(&rows).is_ok());
    }

    #[test]
    fn norm_centres_channels() {
        let a = KpiMatrix::from_rows(&[vec![1.0, 3.0], vec![10.0, 10.0]]).unwrap();
        let n = KpiNorm::fit(2, [&a]);
        assert_eq!(n.mean, [2.0, 10.0]);
        assert_eq!(n.apply(&a).unwrap(), [-1.0, 1.0, 0.0, 0.0]);
    }
}
