use serde::{Deserialize, Serialize};

use super::catalog::RootCause;
use super::db::DbState;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Template {
    FilterScan,
    Join,
    Aggregate,
    Update,
    Insert,
}

impl Template {
    pub fn id(self) -> usize {
        self as usize
    }
}

/// Everything the simulator needs to render and time one query.
///
/// `tables[0]` is the driving table: it carries the predicates and, for
/// inserts, is the source relation (`tables[1]` is the target).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuerySpec {
    pub template: Template,
    pub tables: Vec<String>,
    pub join_count: usize,
    /// Predicate columns on the driving table; the first one decides index use.
    pub predicate_columns: Vec<String>,
    pub comparison: String,
    pub literals: Vec<u32>,
    pub selectivity: f64,
    pub group_column: Option<String>,
    pub select_columns: Vec<String>,
    /// Severity in `[0, 1]` per catalog root cause; 0 means absent.
    pub severities: Vec<f64>,
}

impl QuerySpec {
    pub fn severity(&self, cause: RootCause) -> f64 {
        self.severities.get(cause.index()).copied().unwrap_or(0.0)
    }

    /// 1 for an optimal join order, falling with the join-order defect.
    pub fn join_order_quality(&self) -> f64 {
        1.0 - self.severity(RootCause::JoinOrder)
    }

    /// Redundant-operator overhead introduced by the query text.
    pub fn rewrite_waste(&self) -> f64 {
        self.severity(RootCause::QueryRewrite)
    }

    pub fn has_defects(&self) -> bool {
        self.severities.iter().any(|&s| s > 0.0)
    }

    pub fn validate(&self, db: &DbState) -> Result<()> {
        if self.tables.is_empty() {
            return Err(Error::InvalidSpec("spec references no tables".into()));
        }
        for t in &self.tables {
            db.table(t)?;
        }
        if let Some(&s) = self.severities.iter().find(|s| !(0.0..=1.0).contains(*s)) {
            return Err(Error::InvalidSpec(format!("severity {s} outside [0, 1]")));
        }
        if !(self.selectivity > 0.0 && self.selectivity <= 1.0) {
            return Err(Error::InvalidSpec(format!(
                "selectivity {} outside (0, 1]",
                self.selectivity
            )));
        }
        if self.predicate_columns.is_empty() {
            return Err(Error::InvalidSpec("spec has no predicate".into()));
        }
        let expected_joins = match self.template {
            Template::Join | Template::Aggregate => self.tables.len() - 1,
            Template::FilterScan | Template::Update => 0,
            Template::Insert => 0,
        };
        if self.join_count != expected_joins {
            return Err(Error::InvalidSpec(format!(
                "join count {} does not match {} tables",
                self.join_count,
                self.tables.len()
            )));
        }
        if self.template == Template::Insert && self.tables.len() != 2 {
            return Err(Error::InvalidSpec(
                "insert needs a source and a target".into(),
            ));
        }
        Ok(())
    }
}

/// Copy of `spec` with the `rc`-th defect removed. Idempotent.
pub fn revise(spec: &QuerySpec, rc: usize) -> QuerySpec {
    let mut out = spec.clone();
    if let Some(s) = out.severities.get_mut(rc) {
        *s = 0.0;
    }
    out
}
