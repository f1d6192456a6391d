//! JSON-lines dataset files and train/val/test partitioning.
//!
//! Line 1 is a header object carrying the root-cause `catalog` (and, for
//! synthetic data, the `simulator` state). Every following line is one
//! [`QueryRecord`].

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Map, Value};

use super::kpi::KpiNorm;
use super::log::LogNorm;
use super::record::{QueryRecord, Split};
use super::sql::Vocab;
use crate::error::{Error, Result};
use crate::synthgen::Simulator;

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub catalog: Vec<String>,
    pub records: Vec<QueryRecord>,
    pub log_norm: LogNorm,
    pub kpi_norm: KpiNorm,
    /// Simulator state for synthetic data; enables end-to-end evaluation.
    pub simulator: Option<Simulator>,
}

impl Dataset {
    /// Validate and compute normalisation from the `train` records (all
    /// records if none are flagged train).
    pub fn new(
        catalog: Vec<String>,
        records: Vec<QueryRecord>,
        simulator: Option<Simulator>,
    ) -> Result<Self> {
        validate(&catalog, &records)?;
        let (log_norm, kpi_norm) = fit_norms(&records);
        Ok(Dataset {
            catalog,
            records,
            log_norm,
            kpi_norm,
            simulator,
        })
    }

    /// Like [`Dataset::new`] but with externally supplied normalisation.
    pub fn with_norms(
        catalog: Vec<String>,
        records: Vec<QueryRecord>,
        simulator: Option<Simulator>,
        log_norm: LogNorm,
        kpi_norm: KpiNorm,
    ) -> Result<Self> {
        validate(&catalog, &records)?;
        Ok(Dataset {
            catalog,
            records,
            log_norm,
            kpi_norm,
            simulator,
        })
    }

    pub fn r(&self) -> usize {
        self.catalog.len()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// `(q, t)` of the KPI matrices, if there are records.
    pub fn kpi_shape(&self) -> Option<(usize, usize)> {
        self.records.first().map(|r| (r.kpis.q(), r.kpis.t()))
    }

    pub fn labeled(&self) -> impl Iterator<Item = &QueryRecord> {
        self.records.iter().filter(|r| r.is_labeled())
    }

    /// Records currently flagged with `split`, sharing this dataset's normalisation.
    pub fn subset(&self, split: Split) -> Dataset {
        self.filtered(|r| r.split == split)
    }

    /// Records usable for pretraining: everything except val/test slow queries.
    pub fn pretrain_pool(&self) -> Dataset {
        self.filtered(|r| matches!(r.split, Split::Train | Split::Pretrain))
    }

    fn filtered(&self, keep: impl Fn(&QueryRecord) -> bool) -> Dataset {
        Dataset {
            catalog: self.catalog.clone(),
            records: self.records.iter().filter(|r| keep(r)).cloned().collect(),
            log_norm: self.log_norm.clone(),
            kpi_norm: self.kpi_norm.clone(),
            simulator: self.simulator.clone(),
        }
    }

    pub fn header_json(&self) -> Value {
        let mut obj = Map::new();
        obj.insert("catalog".into(), json!(self.catalog));
        if let Some(sim) = &self.simulator {
            obj.insert(
                "simulator".into(),
                serde_json::to_value(sim).expect("simulator serialises"),
            );
        }
        Value::Object(obj)
    }

    pub fn to_writer<W: Write>(&self, mut w: W) -> Result<()> {
        serde_json::to_writer(&mut w, &self.header_json())?;
        w.write_all(b"\n")?;
        for r in &self.records {
            serde_json::to_writer(&mut w, &r.to_json())?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn from_reader<R: BufRead>(reader: R) -> Result<Self> {
        let vocab = Vocab::standard();
        let mut catalog: Option<Vec<String>> = None;
        let mut simulator = None;
        let mut records = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line_no = i + 1;
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let v: Value = serde_json::from_str(&line).map_err(|e| Error::Parse {
                line: line_no,
                message: e.to_string(),
            })?;
            if catalog.is_none() {
                let (c, s) = parse_header(&v).map_err(|e| locate(line_no, e))?;
                catalog = Some(c);
                simulator = s;
                continue;
            }
            records.push(QueryRecord::from_json(&v, &vocab).map_err(|e| locate(line_no, e))?);
        }
        let catalog = catalog.ok_or_else(|| Error::Schema("missing header line".into()))?;
        Dataset::new(catalog, records, simulator)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let f = fs::File::create(path.as_ref())?;
        self.to_writer(BufWriter::new(f))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let f = fs::File::open(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::NotFound(path.to_path_buf()),
            _ => Error::Io(e),
        })?;
        Self::from_reader(BufReader::new(f))
    }
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    Dataset::load(path)
}

pub fn save_dataset(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    dataset.save(path)
}

fn locate(line: usize, e: Error) -> Error {
    match e {
        Error::Parse { .. } => e,
        other => Error::Schema(format!("line {line}: {other}")),
    }
}

fn parse_header(v: &Value) -> Result<(Vec<String>, Option<Simulator>)> {
    let obj = v
        .as_object()
        .ok_or_else(|| Error::Schema("header is not an object".into()))?;
    let catalog: Vec<String> = serde_json::from_value(
        obj.get("catalog")
            .cloned()
            .ok_or_else(|| Error::Schema("header without `catalog`".into()))?,
    )
    .map_err(|e| Error::Schema(format!("`catalog`: {e}")))?;
    let simulator = match obj.get("simulator") {
        None | Some(Value::Null) => None,
        Some(s) => Some(
            serde_json::from_value(s.clone())
                .map_err(|e| Error::Schema(format!("`simulator`: {e}")))?,
        ),
    };
    Ok((catalog, simulator))
}

fn validate(catalog: &[String], records: &[QueryRecord]) -> Result<()> {
    if catalog.is_empty() {
        return Err(Error::Schema("empty root-cause catalog".into()));
    }
    for (i, name) in catalog.iter().enumerate() {
        if catalog[..i].contains(name) {
            return Err(Error::Schema(format!("duplicate root cause `{name}`")));
        }
    }
    let r = catalog.len();
    let shape = records.first().map(|x| (x.kpis.q(), x.kpis.t()));
    for rec in records {
        rec.validate()?;
        if let Some(y) = &rec.impacts {
            if y.len() != r {
                return Err(Error::Schema(format!(
                    "record `{}`: {} impacts for a catalog of {r}",
                    rec.id,
                    y.len()
                )));
            }
        }
        if Some((rec.kpis.q(), rec.kpis.t())) != shape {
            return Err(Error::Schema(format!(
                "record `{}`: KPI shape differs from the first record",
                rec.id
            )));
        }
        if let Some(spec) = &rec.spec {
            if spec.severities.len() != r {
                return Err(Error::Schema(format!(
                    "record `{}`: spec has {} severities for a catalog of {r}",
                    rec.id,
                    spec.severities.len()
                )));
            }
        }
    }
    Ok(())
}

fn fit_norms(records: &[QueryRecord]) -> (LogNorm, KpiNorm) {
    let train: Vec<&QueryRecord> = records.iter().filter(|r| r.split == Split::Train).collect();
    let basis: Vec<&QueryRecord> = if train.is_empty() {
        records.iter().collect()
    } else {
        train
    };
    let q = records
        .first()
        .map_or(super::kpi::DEFAULT_Q, |r| r.kpis.q());
    (
        LogNorm::fit(basis.iter().map(|r| &r.log)),
        KpiNorm::fit(q, basis.iter().map(|r| &r.kpis)),
    )
}

/// Train / validation / test partition of the labeled records plus the
/// pretraining pool.
#[derive(Clone, Debug)]
pub struct DataSplit {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
    /// Unlabeled records plus the labeled training records.
    pub pretrain: Dataset,
}

/// Rewrite the split flag of every labeled record: a seeded shuffle, then
/// `round(n * ratio)` records to train and val and the rest to test.
pub fn assign_splits(
    records: &mut [QueryRecord],
    ratios: (f64, f64, f64),
    seed: u64,
) -> Result<()> {
    let (a, b, c) = ratios;
    if !(a > 0.0 && b > 0.0 && c > 0.0) || ((a + b + c) - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidConfig(format!(
            "split ratios {ratios:?} must be positive and sum to 1"
        )));
    }
    let mut labeled: Vec<usize> = (0..records.len())
        .filter(|&i| records[i].is_labeled())
        .collect();
    if labeled.len() < 3 {
        return Err(Error::InsufficientData(format!(
            "{} labeled records, need at least 3",
            labeled.len()
        )));
    }
    labeled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n = labeled.len();
    let n_train = ((n as f64 * a).round() as usize).min(n);
    let n_val = ((n as f64 * b).round() as usize).min(n - n_train);
    for (k, &i) in labeled.iter().enumerate() {
        records[i].split = if k < n_train {
            Split::Train
        } else if k < n_train + n_val {
            Split::Val
        } else {
            Split::Test
        };
    }
    Ok(())
}

/// Re-partition labeled records by `ratios` after a seeded shuffle. Split
/// flags are rewritten and normalisation is refitted on the new train part.
pub fn split_dataset(dataset: &Dataset, ratios: (f64, f64, f64), seed: u64) -> Result<DataSplit> {
    let mut records = dataset.records.clone();
    assign_splits(&mut records, ratios, seed)?;
    let full = Dataset::new(dataset.catalog.clone(), records, dataset.simulator.clone())?;
    Ok(DataSplit {
        train: full.subset(Split::Train),
        val: full.subset(Split::Val),
        test: full.subset(Split::Test),
        pretrain: full.pretrain_pool(),
    })
}
