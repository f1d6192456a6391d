use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::catalog::{CatalogKind, RootCause, RootCauseCatalog};
use super::db::DbState;
use super::render::{render_kpis, render_log, render_plan, render_sql};
use super::sim::{
    applicable_causes, impact_vector, noise_factor, simulate_runtime, CostModel, Simulator,
};
use super::spec::{QuerySpec, Template};
use crate::domain::dataset::assign_splits;
use crate::domain::record::{QueryRecord, Split};
use crate::domain::sql::{tokenize_sql, Vocab};
use crate::domain::Dataset;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenConfig {
    pub total: usize,
    pub labeled: usize,
    pub catalog: CatalogKind,
    /// Slow-query threshold in seconds.
    pub delta: f64,
    /// Validity threshold the labels are separated from.
    pub epsilon: f64,
    /// Minimum distance of every label from `epsilon`, and of the top label
    /// from the runner-up.
    pub eta: f64,
    pub noise_sigma: f64,
    pub tables: usize,
    pub train_ratio: f64,
    pub val_ratio: f64,
    pub test_ratio: f64,
    /// Rejection-sampling budget per record.
    pub max_attempts: usize,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            total: 12_000,
            labeled: 2_000,
            catalog: CatalogKind::Default5,
            delta: 1.0,
            epsilon: 0.10,
            eta: 0.02,
            noise_sigma: 0.1,
            tables: 15,
            train_ratio: 0.8,
            val_ratio: 0.1,
            test_ratio: 0.1,
            max_attempts: 2_000,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        if self.labeled > self.total {
            return Err(Error::InvalidConfig(format!(
                "labeled count {} exceeds total {}",
                self.labeled, self.total
            )));
        }
        if !(self.delta > 0.0) || !(self.epsilon > 0.0 && self.epsilon < 1.0) || self.eta < 0.0 {
            return Err(Error::InvalidConfig(
                "delta, epsilon or eta out of range".into(),
            ));
        }
        if !(self.noise_sigma >= 0.0) || self.max_attempts == 0 {
            return Err(Error::InvalidConfig(
                "noise sigma or attempt budget out of range".into(),
            ));
        }
        Ok(())
    }
}

const RECORD_STREAM_OFFSET: u64 = 1;

fn record_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64 + RECORD_STREAM_OFFSET);
    rng
}

/// Draw a random query shape and plant defects where they can act.
pub fn sample_spec<R: Rng>(rng: &mut R, sim: &Simulator) -> Result<QuerySpec> {
    let db = &sim.db;
    let r = sim.catalog.len();
    let templates: &[(Template, f64)] = if r >= 10 {
        &[
            (Template::FilterScan, 0.2),
            (Template::Join, 0.3),
            (Template::Aggregate, 0.2),
            (Template::Update, 0.15),
            (Template::Insert, 0.15),
        ]
    } else {
        &[
            (Template::FilterScan, 0.3),
            (Template::Join, 0.45),
            (Template::Aggregate, 0.25),
        ]
    };
    let template = templates
        .choose_weighted(rng, |t| t.1)
        .map_err(|e| Error::InvalidConfig(e.to_string()))?
        .0;
    let n_tables = match template {
        Template::FilterScan | Template::Update => 1,
        Template::Join => rng.gen_range(2..=4),
        Template::Aggregate => rng.gen_range(1..=2),
        Template::Insert => 2,
    }
    .min(db.tables.len());
    let tables: Vec<String> = db
        .tables
        .choose_multiple(rng, n_tables)
        .map(|t| t.name.clone())
        .collect();
    if template == Template::Insert && tables.len() < 2 {
        return Err(Error::InvalidConfig(
            "insert template needs two tables".into(),
        ));
    }
    let t0 = db.table(&tables[0])?;
    let mut predicate_columns = vec![t0.columns.choose(rng).expect("columns").clone()];
    if rng.gen_bool(0.4) {
        let second = t0.columns.choose(rng).expect("columns").clone();
        if second != predicate_columns[0] {
            predicate_columns.push(second);
        }
    }
    let n_select = rng.gen_range(1..=2);
    let select_columns: Vec<String> = t0.columns.choose_multiple(rng, n_select).cloned().collect();
    let join_count = match template {
        Template::Join | Template::Aggregate => tables.len() - 1,
        _ => 0,
    };
    let mut spec = QuerySpec {
        template,
        join_count,
        predicate_columns,
        comparison: [">", "<", "="].choose(rng).expect("non-empty").to_string(),
        literals: vec![rng.gen_range(1..1000), rng.gen_range(1..100)],
        selectivity: 10f64.powf(rng.gen_range(-3.0..-0.5)),
        group_column: Some(t0.columns.choose(rng).expect("columns").clone()),
        select_columns,
        tables,
        severities: vec![0.0; r],
    };
    let applicable = applicable_causes(&spec, sim)?;
    let indexed = t0.indexed_columns.contains(&spec.predicate_columns[0]);
    for (j, cause) in sim.catalog.causes().iter().enumerate() {
        if !applicable[j] {
            continue;
        }
        let p = match cause {
            RootCause::Statistics => 0.15 + 0.5 * t0.stats_staleness,
            RootCause::Index => {
                if indexed {
                    0.0
                } else {
                    1.0
                }
            }
            RootCause::DistributionKey => 0.15 + 0.5 * t0.distribution_skew,
            RootCause::JoinOrder => 0.45,
            RootCause::QueryRewrite => 0.35,
            RootCause::RepeatedSubquery => 0.3,
            _ => 0.5,
        };
        // Always draw both numbers so the stream does not depend on the branch.
        let present = rng.gen::<f64>() < p;
        let severity = rng.gen_range(0.1..=1.0);
        if present {
            spec.severities[j] = severity;
        }
    }
    Ok(spec)
}

/// Label constraints for a slow query: every impact at least `eta` away
/// from `epsilon`, and a top-1 margin of `eta` when any cause is valid.
pub fn labels_separated(y: &[f64], epsilon: f64, eta: f64) -> bool {
    if y.iter().any(|v| (v - epsilon).abs() < eta) {
        return false;
    }
    let mut sorted = y.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    if sorted[0] >= epsilon && sorted.len() > 1 && sorted[0] - sorted[1] < eta {
        return false;
    }
    true
}

fn build_record(
    index: usize,
    spec: QuerySpec,
    sim: &Simulator,
    vocab: &Vocab,
    labeled: bool,
    rng: &mut ChaCha8Rng,
) -> Result<QueryRecord> {
    let runtime = simulate_runtime(&spec, sim, None)?;
    let impacts = impact_vector(&spec, sim)?;
    let sql_text = render_sql(&spec, sim)?;
    let sql = tokenize_sql(&sql_text, vocab)?;
    let plan = render_plan(&spec, sim)?;
    let log = render_log(&spec, sim, runtime, &impacts, &plan)?;
    let kpis = render_kpis(sim, runtime, &impacts, &log, rng)?;
    let observed = runtime * noise_factor(sim.cost.noise_sigma, rng);
    Ok(QueryRecord {
        id: format!("q{index:06}"),
        sql_text,
        sql,
        plan,
        log,
        kpis,
        runtime_s: observed,
        split: if labeled {
            Split::Train
        } else {
            Split::Pretrain
        },
        impacts: labeled.then_some(impacts),
        spec: Some(spec),
    })
}

fn generate_one(index: usize, cfg: &GenConfig, sim: &Simulator, seed: u64) -> Result<QueryRecord> {
    let vocab = Vocab::standard();
    let mut rng = record_rng(seed, index);
    let slow = index < cfg.labeled;
    for _ in 0..cfg.max_attempts {
        let spec = sample_spec(&mut rng, sim)?;
        let runtime = simulate_runtime(&spec, sim, None)?;
        if slow {
            if runtime <= cfg.delta {
                continue;
            }
            let y = impact_vector(&spec, sim)?;
            if !labels_separated(&y, cfg.epsilon, cfg.eta) {
                continue;
            }
        } else if runtime > cfg.delta {
            continue;
        }
        return build_record(index, spec, sim, &vocab, slow, &mut rng);
    }
    Err(Error::InvalidConfig(format!(
        "record {index}: no admissible query after {} attempts",
        cfg.max_attempts
    )))
}

/// Build the simulator for `cfg` under `seed`.
pub fn build_simulator(cfg: &GenConfig, seed: u64) -> Result<Simulator> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(0);
    let db = DbState::generate(cfg.tables, seed, &mut rng)?;
    Ok(Simulator {
        db,
        cost: CostModel {
            noise_sigma: cfg.noise_sigma,
            ..CostModel::default()
        },
        catalog: RootCauseCatalog::new(cfg.catalog),
    })
}

/// Generate a full labeled workload. Records `0..labeled` are slow labeled
/// queries, the rest are fast pretraining queries; labeled records are split
/// into train/val/test by the configured ratios.
pub fn generate_workload(cfg: &GenConfig, seed: u64) -> Result<Dataset> {
    cfg.validate()?;
    let sim = build_simulator(cfg, seed)?;
    let mut records = (0..cfg.total)
        .into_par_iter()
        .map(|i| generate_one(i, cfg, &sim, seed))
        .collect::<Result<Vec<_>>>()?;
    if cfg.labeled >= 3 {
        assign_splits(
            &mut records,
            (cfg.train_ratio, cfg.val_ratio, cfg.test_ratio),
            seed,
        )?;
    }
    Dataset::new(sim.catalog.names(), records, Some(sim))
}
