use crate::diffcore::Tensor;
use crate::domain::log::LOG_DIM;
use crate::domain::sql::Vocab;
use crate::domain::{KpiNorm, LogNorm, PlanDag, QueryRecord};
use crate::error::Result;

/// Tree distances 0..=8 get their own bias slot; anything further shares the last.
pub const DIST_BUCKETS: usize = 10;

/// Plan features ready for the plan encoder.
#[derive(Clone, Debug, PartialEq)]
pub struct PreparedPlan {
    /// Operator kind index per node (`MASK_KIND` when masked).
    pub kinds: Vec<usize>,
    /// `[log1p(est_rows) / 10, log1p(est_cost) / 10]` per node, row-major.
    pub numeric: Vec<f64>,
    /// Identifier-piece vocabulary ids of each node's table and columns.
    pub idents: Vec<Vec<usize>>,
    /// Distance bucket for every ordered node pair, row-major `n x n`.
    pub buckets: Vec<usize>,
    pub root: usize,
}

impl PreparedPlan {
    pub fn from_dag(plan: &PlanDag, vocab: &Vocab) -> Self {
        let n = plan.len();
        let mut kinds = Vec::with_capacity(n);
        let mut numeric = Vec::with_capacity(2 * n);
        let mut idents = Vec::with_capacity(n);
        for node in plan.nodes() {
            kinds.push(node.kind.index());
            numeric.push(node.est_rows.ln_1p() / 10.0);
            numeric.push(node.est_cost.ln_1p() / 10.0);
            let mut ids = Vec::new();
            for name in node.table.iter().chain(&node.columns) {
                ids.extend(
                    Vocab::identifier_pieces(name)
                        .iter()
                        .map(|p| vocab.piece_id(p)),
                );
            }
            idents.push(ids);
        }
        let buckets = plan
            .distances()
            .into_iter()
            .flat_map(|row| row.into_iter().map(|d| d.min(DIST_BUCKETS - 1)))
            .collect();
        PreparedPlan {
            kinds,
            numeric,
            idents,
            buckets,
            root: plan.root(),
        }
    }

    pub fn len(&self) -> usize {
        self.kinds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kinds.is_empty()
    }

    /// Flattened identifier ids and the `[n, m]` matrix averaging them per node.
    pub fn ident_average(&self) -> Option<(Vec<usize>, Tensor)> {
        let ids: Vec<usize> = self.idents.iter().flatten().copied().collect();
        if ids.is_empty() {
            return None;
        }
        let (n, m) = (self.idents.len(), ids.len());
        let mut avg = vec![0.0; n * m];
        let mut col = 0;
        for (i, node) in self.idents.iter().enumerate() {
            for _ in node {
                avg[i * m + col] = 1.0 / node.len() as f64;
                col += 1;
            }
        }
        Some((
            ids,
            Tensor::new(vec![n, m], avg).expect("shape matches data"),
        ))
    }
}

/// One record in the form the encoders consume.
#[derive(Clone, Debug, PartialEq)]
pub struct PreparedInput {
    pub sql_ids: Vec<usize>,
    pub plan: PreparedPlan,
    /// Standardised log fields.
    pub log: [f64; LOG_DIM],
    /// Standardised KPI grid, row-major by channel.
    pub kpi: Vec<f64>,
}

pub fn prepare_record(
    record: &QueryRecord,
    log_norm: &LogNorm,
    kpi_norm: &KpiNorm,
    max_sql_len: usize,
    vocab: &Vocab,
) -> Result<PreparedInput> {
    let mut sql_ids = record.sql.ids();
    sql_ids.truncate(max_sql_len);
    Ok(PreparedInput {
        sql_ids,
        plan: PreparedPlan::from_dag(&record.plan, vocab),
        log: log_norm.apply(&record.log),
        kpi: kpi_norm.apply(&record.kpis)?,
    })
}
