use std::collections::BTreeSet;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::domain::kpi::DEFAULT_Q;
use crate::error::{Error, Result};

/// Table names, all made of pieces known to the standard SQL vocabulary.
const TABLE_NAMES: [&str; 15] = [
    "orders",
    "customers",
    "lineitem",
    "store_sales",
    "web_page",
    "inventory",
    "payments",
    "user_events",
    "products",
    "sessions",
    "shipments",
    "reviews",
    "campaign_ads",
    "returns",
    "warehouse",
];

const COLUMN_POOL: [&str; 14] = [
    "status",
    "amount",
    "price",
    "qty",
    "created_at",
    "category",
    "city",
    "score",
    "level",
    "region",
    "total",
    "discount",
    "brand",
    "segment",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub name: String,
    pub row_count: u64,
    /// Non-key columns, usable in predicates and groupings.
    pub columns: Vec<String>,
    pub indexed_columns: BTreeSet<String>,
    pub stats_staleness: f64,
    pub distribution_skew: f64,
    /// Average row width in bytes.
    pub row_bytes: f64,
}

impl Table {
    /// Column other tables use to reference this one, e.g. `orders_id`.
    pub fn foreign_key(&self) -> String {
        let head = self.name.split('_').next().unwrap_or(&self.name);
        format!("{head}_id")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KpiBaseline {
    pub mean: f64,
    pub std: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DbState {
    pub tables: Vec<Table>,
    pub kpi_baseline: Vec<KpiBaseline>,
    pub seed: u64,
}

impl DbState {
    pub fn generate<R: Rng>(n_tables: usize, seed: u64, rng: &mut R) -> Result<Self> {
        if n_tables == 0 || n_tables > TABLE_NAMES.len() {
            return Err(Error::InvalidConfig(format!(
                "table count must be in 1..={}",
                TABLE_NAMES.len()
            )));
        }
        let tables = TABLE_NAMES[..n_tables]
            .iter()
            .map(|name| {
                let mut cols: Vec<String> = COLUMN_POOL.iter().map(|c| c.to_string()).collect();
                // Partial Fisher-Yates pick of five columns.
                for i in 0..5 {
                    let j = rng.gen_range(i..cols.len());
                    cols.swap(i, j);
                }
                cols.truncate(5);
                let indexed = cols
                    .iter()
                    .filter(|_| rng.gen_bool(0.4))
                    .cloned()
                    .chain(std::iter::once("id".to_string()))
                    .collect();
                Table {
                    name: name.to_string(),
                    row_count: 10f64.powf(rng.gen_range(5.3..7.6)).round() as u64,
                    columns: cols,
                    indexed_columns: indexed,
                    stats_staleness: rng.gen_range(0.0..1.0),
                    distribution_skew: rng.gen_range(0.0..1.0),
                    row_bytes: rng.gen_range(60.0..240.0),
                }
            })
            .collect();
        let kpi_baseline = [
            (35.0, 5.0),
            (55.0, 3.0),
            (800.0, 100.0),
            (5e6, 5e5),
            (40.0, 4.0),
            (92.0, 2.0),
        ]
        .iter()
        .map(|&(m, s)| KpiBaseline {
            mean: m * rng.gen_range(0.9..1.1),
            std: s,
        })
        .collect::<Vec<_>>();
        debug_assert_eq!(kpi_baseline.len(), DEFAULT_Q);
        let db = DbState {
            tables,
            kpi_baseline,
            seed,
        };
        db.validate()?;
        Ok(db)
    }

    pub fn validate(&self) -> Result<()> {
        for t in &self.tables {
            if t.row_count < 1 {
                return Err(Error::InvalidSpec(format!(
                    "table `{}` has no rows",
                    t.name
                )));
            }
            if !(0.0..=1.0).contains(&t.stats_staleness)
                || !(0.0..=1.0).contains(&t.distribution_skew)
            {
                return Err(Error::InvalidSpec(format!(
                    "table `{}`: staleness and skew must lie in [0, 1]",
                    t.name
                )));
            }
        }
        Ok(())
    }

    pub fn table(&self, name: &str) -> Result<&Table> {
        self.tables
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| Error::InvalidSpec(format!("unknown table `{name}`")))
    }
}
