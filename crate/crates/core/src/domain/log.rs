//! Execution-log vectors and their z-score normalisation.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const LOG_DIM: usize = 13;

pub const LOG_FIELDS: [&str; LOG_DIM] = [
    "duration_ms",
    "rows_read",
    "rows_returned",
    "bytes_scanned",
    "memory_peak_kb",
    "cpu_ms",
    "io_reads",
    "io_writes",
    "shuffle_bytes",
    "spill_bytes",
    "queue_wait_ms",
    "plan_node_count",
    "retries",
];

pub const STD_FLOOR: f64 = 1e-6;

pub fn field_index(name: &str) -> Option<usize> {
    LOG_FIELDS.iter().position(|f| *f == name)
}

/// Raw log counters in [`LOG_FIELDS`] order.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogVector {
    values: [f64; LOG_DIM],
}

impl LogVector {
    pub fn new(values: [f64; LOG_DIM]) -> Result<Self> {
        for (name, v) in LOG_FIELDS.iter().zip(values) {
            if !v.is_finite() {
                return Err(Error::InvalidInput(format!(
                    "log field `{name}` is not finite"
                )));
            }
            if v < 0.0 {
                return Err(Error::InvalidInput(format!(
                    "log field `{name}` is negative"
                )));
            }
        }
        Ok(LogVector { values })
    }

    pub fn from_map(raw: &BTreeMap<String, f64>) -> Result<Self> {
        if let Some(extra) = raw.keys().find(|k| field_index(k).is_none()) {
            return Err(Error::InvalidInput(format!("unknown log field `{extra}`")));
        }
        let mut values = [0.0; LOG_DIM];
        for (i, name) in LOG_FIELDS.iter().enumerate() {
            values[i] = *raw
                .get(*name)
                .ok_or_else(|| Error::MissingLogField(name.to_string()))?;
        }
        Self::new(values)
    }

    pub fn to_map(&self) -> BTreeMap<String, f64> {
        LOG_FIELDS
            .iter()
            .zip(self.values)
            .map(|(k, v)| (k.to_string(), v))
            .collect()
    }

    pub fn values(&self) -> &[f64; LOG_DIM] {
        &self.values
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        field_index(name).map(|i| self.values[i])
    }
}

/// Per-field mean and standard deviation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogNorm {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl LogNorm {
    pub fn identity() -> Self {
        LogNorm {
            mean: vec![0.0; LOG_DIM],
            std: vec![1.0; LOG_DIM],
        }
    }

    /// Population statistics over `logs`; identity when empty.
    pub fn fit<'a>(logs: impl IntoIterator<Item = &'a LogVector>) -> Self {
        let logs: Vec<&LogVector> = logs.into_iter().collect();
        if logs.is_empty() {
            return Self::identity();
        }
        let n = logs.len() as f64;
        let mut mean = vec![0.0; LOG_DIM];
        for l in &logs {
            for (m, v) in mean.iter_mut().zip(l.values) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; LOG_DIM];
        for l in &logs {
            for i in 0..LOG_DIM {
                var[i] += (l.values[i] - mean[i]).powi(2);
            }
        }
        let std = var.iter().map(|v| (v / n).sqrt()).collect();
        LogNorm { mean, std }
    }

    pub fn apply(&self, log: &LogVector) -> [f64; LOG_DIM] {
        let mut out = [0.0; LOG_DIM];
        for i in 0..LOG_DIM {
            out[i] = (log.values[i] - self.mean[i]) / self.std[i].max(STD_FLOOR);
        }
        out
    }
}

/// Validate a raw name -> value map and standardise it.
pub fn vectorize_log(raw: &BTreeMap<String, f64>, norm: &LogNorm) -> Result<[f64; LOG_DIM]> {
    Ok(norm.apply(&LogVector::from_map(raw)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn raw(v: f64) -> BTreeMap<String, f64> {
        LOG_FIELDS.iter().map(|f| (f.to_string(), v)).collect()
    }

    #[test]
    fn standardises_with_given_stats() {
        let mut norm = LogNorm::identity();
        norm.mean[0] = 1500.0;
        norm.std[0] = 500.0;
        norm.mean[1] = 7.0;
        let mut m = raw(7.0);
        m.insert("duration_ms".into(), 2500.0);
        let z = vectorize_log(&m, &norm).unwrap();
        assert_eq!(z[0], 2.0);
        assert_eq!(z[1], 0.0);
    }

    #[test]
    fn missing_and_bad_fields() {
        let mut m = raw(1.0);
        m.remove("retries");
        assert!(matches!(
            vectorize_log(&m, &LogNorm::identity()),
            Err(Error::MissingLogField(f)) if f == "retries"
        ));
        let mut m = raw(1.0);
        m.insert("cpu_ms".into(), f64::NAN);
        assert!(matches!(
            LogVector::from_map(&m),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn zero_variance_uses_floor() {
        let a = LogVector::new([3.0; LOG_DIM]).unwrap();
        let norm = LogNorm::fit([&a, &a]);
        assert_eq!(norm.std[0], 0.0);
        assert_eq!(norm.apply(&a), [0.0; LOG_DIM]);
    }
}
