//! Rendering of a query spec into the four observed modalities.

use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::catalog::RootCause;
use super::sim::{build_physical, PhysNode, Role, Simulator};
use super::spec::{QuerySpec, Template};
use crate::domain::kpi::{KpiMatrix, DEFAULT_Q, DEFAULT_T, PERCENT_CHANNELS};
use crate::domain::log::{LogVector, LOG_DIM};
use crate::domain::plan::{OperatorKind, PlanDag, PlanNode, PlanTree};
use crate::error::Result;

/// SQL text. Defects that live in the statement (query rewrite, repeated
/// subqueries, full-table updates) are visible here.
pub fn render_sql(spec: &QuerySpec, sim: &Simulator) -> Result<String> {
    let db = &sim.db;
    let t0 = db.table(&spec.tables[0])?;
    let t = &t0.name;
    let p0 = &spec.predicate_columns[0];
    let cmp = &spec.comparison;
    let lit0 = spec.literals.first().copied().unwrap_or(1);
    let lit1 = spec.literals.get(1).copied().unwrap_or(1);

    let mut source = t.clone();
    let levels = (3.0 * spec.severity(RootCause::QueryRewrite)).ceil() as usize;
    for _ in 0..levels {
        source = format!("(select * from {source}) as sub");
    }

    let mut pred = format!("{t}.{p0} {cmp} {lit0}");
    if let Some(p1) = spec.predicate_columns.get(1) {
        pred.push_str(&format!(" and {t}.{p1} = {lit1}"));
    }
    let repeats = (2.0 * spec.severity(RootCause::RepeatedSubquery)).ceil() as usize;
    for _ in 0..repeats {
        pred.push_str(&format!(
            " and {t}.id in (select {t}.id from {t} where {t}.{p0} {cmp} {lit0})"
        ));
    }

    let mut joins = String::new();
    for other in &spec.tables[1..] {
        if matches!(spec.template, Template::Join | Template::Aggregate) {
            joins.push_str(&format!(
                " join {other} on {t}.id = {other}.{}",
                t0.foreign_key()
            ));
        }
    }
    let cols: Vec<String> = spec
        .select_columns
        .iter()
        .map(|c| format!("{t}.{c}"))
        .collect();

    let sql = match spec.template {
        Template::FilterScan => {
            format!("select {} from {source} where {pred}", cols.join(", "))
        }
        Template::Join => {
            format!(
                "select {} from {source}{joins} where {pred}",
                cols.join(", ")
            )
        }
        Template::Aggregate => {
            let g = spec.group_column.as_deref().unwrap_or("id");
            let c = spec
                .select_columns
                .first()
                .map(String::as_str)
                .unwrap_or("id");
            let mut s = format!(
                "select {t}.{g}, count(*), sum({t}.{c}) from {source}{joins} where {pred} group by {t}.{g}"
            );
            if lit1 % 2 == 0 {
                s.push_str(&format!(" order by {t}.{g}"));
            }
            s
        }
        Template::Update => {
            let c = spec
                .select_columns
                .first()
                .map(String::as_str)
                .unwrap_or("status");
            let mut s = format!("update {t} set {t}.{c} = {lit1} where {pred}");
            if spec.severity(RootCause::FullTableUpdate) > 0.0 {
                s.push_str(&format!(" or {t}.{p0} is not null"));
            }
            s
        }
        Template::Insert => {
            format!(
                "insert into {} select * from {source} where {pred}",
                spec.tables[1]
            )
        }
    };
    Ok(sql)
}

/// Order in which the toy planner joins the inputs: smallest first, or
/// largest first when the join-order defect is present.
fn render_order(spec: &QuerySpec, sim: &Simulator) -> Result<Vec<usize>> {
    let mut order: Vec<usize> = (0..spec.tables.len()).collect();
    if spec.join_count == 0 {
        return Ok(order);
    }
    let rows: Vec<f64> = spec
        .tables
        .iter()
        .enumerate()
        .map(|(i, name)| {
            let n = sim
                .db
                .table(name)
                .map(|t| t.row_count as f64)
                .unwrap_or(1.0);
            if i == 0 {
                n * spec.selectivity
            } else {
                n
            }
        })
        .collect();
    order.sort_by(|&a, &b| rows[a].total_cmp(&rows[b]).then(a.cmp(&b)));
    if spec.severity(RootCause::JoinOrder) > 0.0 {
        order.reverse();
    }
    Ok(order)
}

/// The optimizer's view of the plan.
pub fn render_plan(spec: &QuerySpec, sim: &Simulator) -> Result<PlanDag> {
    let order = render_order(spec, sim)?;
    let phys = build_physical(spec, &sim.db, &sim.cost, &order)?;
    let tree = to_plan_tree(&phys, spec, sim);
    let tree = match spec.template {
        Template::Aggregate if spec.literals.get(1).copied().unwrap_or(1) % 2 == 0 => {
            let rows = tree.node.est_rows;
            let mut sort =
                PlanNode::new(OperatorKind::Sort, rows, tree.node.est_cost + rows * 1e-5);
            sort.columns = spec.group_column.iter().cloned().collect();
            PlanTree::with(sort, vec![tree])
        }
        _ => tree,
    };
    PlanDag::from_tree(&tree)
}

fn to_plan_tree(n: &PhysNode, spec: &QuerySpec, sim: &Simulator) -> PlanTree {
    let s_stat = spec.severity(RootCause::Statistics);
    let s_join = spec.severity(RootCause::JoinOrder);
    let s_dk = spec.severity(RootCause::DistributionKey);
    let s_idx = spec.severity(RootCause::Index);

    let children: Vec<PlanTree> = n
        .children
        .iter()
        .map(|c| to_plan_tree(c, spec, sim))
        .collect();
    let child_cost: f64 = children.iter().map(|c| c.node.est_cost).sum();
    // The optimizer knows every cost factor except its own stale statistics.
    let mut visible = spec.severities.clone();
    if let Some(s) = visible.get_mut(RootCause::Statistics.index()) {
        *s = 0.0;
    }
    let own_ms = n.base_s * sim.cost.multiplier(n.affects, &visible) * 1000.0;

    let driving = n.table.as_deref() == Some(spec.tables[0].as_str());
    let (kind, est_rows) = match n.role {
        Role::Access if driving && n.affects & RootCause::Index.bit() != 0 => {
            if s_idx > 0.0 {
                let full = sim
                    .db
                    .table(&spec.tables[0])
                    .map(|t| t.row_count as f64)
                    .unwrap_or(n.rows);
                (OperatorKind::Scan, full)
            } else {
                (OperatorKind::IndexScan, n.rows)
            }
        }
        Role::Access => (OperatorKind::Scan, n.rows),
        Role::Filter => (OperatorKind::Filter, n.rows / (1.0 + 3.0 * s_stat)),
        Role::Exchange => (OperatorKind::Exchange, n.rows * (1.0 + 3.0 * s_dk)),
        Role::Join => {
            let kind = if s_stat > 0.5 {
                OperatorKind::NestedLoopJoin
            } else if spec.literals.first().copied().unwrap_or(0) % 3 == 0 {
                OperatorKind::MergeJoin
            } else {
                OperatorKind::HashJoin
            };
            (kind, n.rows * (1.0 + 2.0 * s_join) / (1.0 + 3.0 * s_stat))
        }
        Role::Aggregate => (OperatorKind::Aggregate, n.rows),
        Role::Project => (OperatorKind::Project, n.rows),
        Role::Update => (OperatorKind::Update, n.rows),
        Role::Insert => (OperatorKind::Insert, n.rows),
    };
    let mut node = PlanNode::new(kind, est_rows, own_ms + child_cost);
    node.table = n.table.clone();
    node.columns = n.columns.clone();
    let mut tree = PlanTree::with(node, children);

    // Statement-level waste shows up as extra operators over the driving input.
    if n.role == Role::Filter {
        let rows = tree.node.est_rows;
        let per_op = rows * 1e-5;
        let repeats = (2.0 * spec.severity(RootCause::RepeatedSubquery)).ceil() as usize;
        for _ in 0..repeats {
            let t = &spec.tables[0];
            let full = sim.db.table(t).map(|x| x.row_count as f64).unwrap_or(rows);
            let mut scan = PlanNode::new(OperatorKind::Scan, full, full * 1e-4);
            scan.table = Some(t.clone());
            let sub_cost = scan.est_cost + per_op;
            let sub = PlanTree::with(
                PlanNode::new(OperatorKind::SubqueryScan, rows, sub_cost),
                vec![PlanTree::leaf(scan)],
            );
            let cost = tree.node.est_cost + sub_cost + per_op;
            let mut semi = PlanNode::new(OperatorKind::HashJoin, rows, cost);
            semi.columns = vec!["id".into()];
            tree = PlanTree::with(semi, vec![tree, sub]);
        }
        let levels = (3.0 * spec.severity(RootCause::QueryRewrite)).ceil() as usize;
        for _ in 0..levels {
            let cost = tree.node.est_cost + per_op;
            tree = PlanTree::with(
                PlanNode::new(OperatorKind::SubqueryScan, rows, cost),
                vec![tree],
            );
        }
    }
    tree
}

/// Runtime saved by removing each catalog defect, in seconds.
fn extra_seconds(impacts: &[f64], runtime: f64) -> [f64; 10] {
    let mut out = [0.0; 10];
    for (j, y) in impacts.iter().enumerate().take(10) {
        out[j] = (y * runtime).max(0.0);
    }
    out
}

/// Execution counters of a noiseless simulated run.
pub fn render_log(
    spec: &QuerySpec,
    sim: &Simulator,
    runtime: f64,
    impacts: &[f64],
    plan: &PlanDag,
) -> Result<LogVector> {
    use RootCause::*;
    let phys = build_physical(spec, &sim.db, &sim.cost, &render_order(spec, sim)?)?;
    let x = extra_seconds(impacts, runtime);
    let e = |c: RootCause| x[c.index()];

    let mut rows_read = 0.0;
    let mut bytes = 0.0;
    let mut exch_rows = 0.0;
    let mut hash_rows = 0.0;
    let mut write_rows = 0.0;
    phys.visit(&mut |n| match n.role {
        Role::Access => {
            let t = n.table.as_deref().and_then(|t| sim.db.table(t).ok());
            let full = t.map(|t| t.row_count as f64).unwrap_or(n.rows);
            let read = if n.affects & Index.bit() != 0 && spec.severity(Index) == 0.0 {
                n.rows
            } else {
                full
            };
            rows_read += read;
            bytes += read * t.map(|t| t.row_bytes).unwrap_or(100.0);
        }
        Role::Exchange => exch_rows += n.rows,
        Role::Join | Role::Aggregate => hash_rows += n.children.iter().map(|c| c.rows).sum::<f64>(),
        Role::Update | Role::Insert => write_rows += n.rows,
        _ => {}
    });
    let skew = sim.db.table(&spec.tables[0])?.distribution_skew;

    let mut v = [0.0; LOG_DIM];
    v[0] = runtime * 1000.0;
    v[1] = rows_read;
    v[2] = phys.rows;
    v[3] = bytes;
    v[4] = 1024.0 + hash_rows * 0.05 + 2e5 * e(Statistics) + 1e5 * e(ComplexJoin);
    v[5] = 600.0 * runtime + 400.0 * (e(QueryRewrite) + e(RepeatedSubquery));
    v[6] = rows_read / 200.0 + 4e3 * e(Index);
    v[7] = write_rows / 50.0 + 5e3 * (e(RedundantIndex) + e(FullTableUpdate) + e(LargeInsert));
    v[8] = exch_rows * 64.0 + 4e8 * e(DistributionKey);
    v[9] = 1e8 * e(JoinOrder) + 5e7 * e(ComplexJoin);
    v[10] = 20.0 + 300.0 * e(DistributionKey) * (0.5 + skew);
    v[11] = plan.len() as f64;
    v[12] = f64::from(spec.literals.first().copied().unwrap_or(1) % 7 == 0);
    LogVector::new(v)
}

/// Instance KPIs over the `DEFAULT_T` seconds before the query: baseline
/// noise plus query-correlated bumps in the last ten samples.
pub fn render_kpis(
    sim: &Simulator,
    runtime: f64,
    impacts: &[f64],
    log: &LogVector,
    rng: &mut ChaCha8Rng,
) -> Result<KpiMatrix> {
    use RootCause::*;
    let x = extra_seconds(impacts, runtime);
    let e = |c: RootCause| x[c.index()];
    let q = DEFAULT_Q;
    let t = DEFAULT_T;
    let lv = log.values();
    let bump = [
        (8.0 * runtime).min(40.0),
        (10.0 * (e(Statistics) + e(JoinOrder) + e(ComplexJoin))).min(30.0),
        300.0 * lv[1] / 1e7 + 500.0 * e(Index),
        2e6 * e(DistributionKey) + lv[8] / 1e3,
        5.0 * runtime.sqrt(),
        -(10.0 * e(Index)).min(30.0),
    ];
    let mut data = vec![0.0; q * t];
    for c in 0..q {
        let base = sim.db.kpi_baseline[c];
        let noise = Normal::new(0.0, base.std).expect("finite std");
        for k in 0..t {
            let mut v = base.mean + noise.sample(rng);
            let tail = t.saturating_sub(10);
            if k >= tail {
                v += bump[c] * (k - tail + 1) as f64 / 10.0;
            }
            v = if PERCENT_CHANNELS.contains(&c) {
                v.clamp(0.0, 100.0)
            } else {
                v.max(0.0)
            };
            data[c * t + k] = v;
        }
    }
    KpiMatrix::new(q, t, data)
}
