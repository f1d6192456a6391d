//! Toy planner and cost model.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal};
use serde::{Deserialize, Serialize};

use super::catalog::{RootCause, RootCauseCatalog};
use super::db::DbState;
use super::spec::{QuerySpec, Template};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostModel {
    /// Seconds per row for each operator family.
    pub scan_per_row: f64,
    pub filter_per_row: f64,
    pub join_per_row: f64,
    pub exchange_per_row: f64,
    pub aggregate_per_row: f64,
    pub project_per_row: f64,
    pub write_per_row: f64,
    /// Multiplier slope per root cause, in [`RootCause::ALL`] order.
    pub alpha: Vec<f64>,
    /// Lognormal sigma of observed-runtime noise.
    pub noise_sigma: f64,
}

impl Default for CostModel {
    fn default() -> Self {
        CostModel {
            scan_per_row: 1e-7,
            filter_per_row: 2e-8,
            join_per_row: 1e-7,
            exchange_per_row: 3e-8,
            aggregate_per_row: 5e-8,
            project_per_row: 1e-8,
            write_per_row: 2e-7,
            alpha: vec![2.0, 2.5, 5.0, 4.0, 1.5, 3.0, 2.0, 2.0, 4.0, 4.0],
            noise_sigma: 0.1,
        }
    }
}

impl CostModel {
    /// Defect multiplier of an operator: `prod_j (1 + alpha_j * s_j)` over the
    /// causes that affect it. Exactly 1 when every relevant severity is 0.
    pub fn multiplier(&self, affects: u16, severities: &[f64]) -> f64 {
        severities
            .iter()
            .enumerate()
            .filter(|(j, _)| affects & (1 << j) != 0)
            .map(|(j, s)| 1.0 + self.alpha[j] * s)
            .product()
    }
}

/// Database plus cost model: the full simulator state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Simulator {
    pub db: DbState,
    pub cost: CostModel,
    pub catalog: RootCauseCatalog,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Role {
    Access,
    Filter,
    Exchange,
    Join,
    Aggregate,
    Project,
    Update,
    Insert,
}

/// Operator of the simulated physical plan.
#[derive(Clone, Debug)]
pub(crate) struct PhysNode {
    pub role: Role,
    pub table: Option<String>,
    pub columns: Vec<String>,
    /// True output cardinality.
    pub rows: f64,
    pub base_s: f64,
    pub affects: u16,
    pub children: Vec<PhysNode>,
}

impl PhysNode {
    fn new(role: Role, rows: f64, base_s: f64, affects: u16, children: Vec<PhysNode>) -> Self {
        PhysNode {
            role,
            table: None,
            columns: Vec::new(),
            rows,
            base_s,
            affects,
            children,
        }
    }

    pub fn visit<'a>(&'a self, f: &mut impl FnMut(&'a PhysNode)) {
        f(self);
        for c in &self.children {
            c.visit(f);
        }
    }

    /// Union of all affect bits in the subtree.
    pub fn affect_mask(&self) -> u16 {
        let mut m = 0;
        self.visit(&mut |n| m |= n.affects);
        m
    }
}

fn bits(causes: &[RootCause]) -> u16 {
    causes.iter().fold(0, |m, c| m | c.bit())
}

/// Build the physical plan, joining inputs in `order` (indices into `spec.tables`).
pub(crate) fn build_physical(
    spec: &QuerySpec,
    db: &DbState,
    cm: &CostModel,
    order: &[usize],
) -> Result<PhysNode> {
    use RootCause::*;
    spec.validate(db)?;
    let t0 = db.table(&spec.tables[0])?;
    let n0 = t0.row_count as f64;
    let sel = spec.selectivity;

    let mut access0_bits = vec![Index, QueryRewrite];
    if matches!(spec.template, Template::FilterScan | Template::Aggregate) {
        access0_bits.push(RepeatedSubquery);
    }
    if spec.template == Template::Update {
        access0_bits.push(FullTableUpdate);
    }
    let mut access0 = PhysNode::new(
        Role::Access,
        n0 * sel,
        n0 * cm.scan_per_row * (sel + 0.1),
        bits(&access0_bits),
        vec![],
    );
    access0.table = Some(t0.name.clone());
    let mut filter0 = PhysNode::new(
        Role::Filter,
        n0 * sel,
        n0 * cm.filter_per_row,
        bits(&[Statistics]),
        vec![access0],
    );
    filter0.columns = spec.predicate_columns.clone();

    let input = |i: usize| -> Result<PhysNode> {
        if i == 0 {
            return Ok(filter0.clone());
        }
        let t = db.table(&spec.tables[i])?;
        let n = t.row_count as f64;
        let mut a = PhysNode::new(
            Role::Access,
            n,
            n * cm.scan_per_row,
            bits(&[QueryRewrite]),
            vec![],
        );
        a.table = Some(t.name.clone());
        Ok(a)
    };
    let exchange = |child: PhysNode| -> PhysNode {
        let rows = child.rows;
        PhysNode::new(
            Role::Exchange,
            rows,
            rows * cm.exchange_per_row,
            bits(&[DistributionKey]),
            vec![child],
        )
    };

    let join_bits = if spec.join_count >= 2 {
        bits(&[JoinOrder, Statistics, ComplexJoin])
    } else {
        bits(&[JoinOrder, Statistics])
    };
    let joined = |order: &[usize]| -> Result<PhysNode> {
        let mut cur = exchange(input(order[0])?);
        for &i in &order[1..] {
            let right = exchange(input(i)?);
            let (l, r) = (cur.rows, right.rows);
            let key = db.table(&spec.tables[order[0]])?.foreign_key();
            let mut j = PhysNode::new(
                Role::Join,
                l.min(r) * 1.5,
                0.5 * (l + r) * cm.join_per_row,
                join_bits,
                vec![cur, right],
            );
            j.columns = vec![key];
            cur = j;
        }
        Ok(cur)
    };

    let project = |child: PhysNode| -> PhysNode {
        let rows = child.rows;
        PhysNode::new(
            Role::Project,
            rows,
            rows * cm.project_per_row,
            bits(&[QueryRewrite]),
            vec![child],
        )
    };

    let root = match spec.template {
        Template::FilterScan => project(filter0.clone()),
        Template::Join => project(joined(order)?),
        Template::Aggregate => {
            let below = if spec.join_count > 0 {
                joined(order)?
            } else {
                filter0.clone()
            };
            let ex = exchange(below);
            let rows = ex.rows;
            let mut agg = PhysNode::new(
                Role::Aggregate,
                (rows * 0.01).max(1.0),
                rows * cm.aggregate_per_row,
                bits(&[DistributionKey]),
                vec![ex],
            );
            agg.columns = spec.group_column.iter().cloned().collect();
            project(agg)
        }
        Template::Update => {
            let rows = n0 * sel;
            let mut u = PhysNode::new(
                Role::Update,
                rows,
                rows * cm.write_per_row,
                bits(&[RedundantIndex, FullTableUpdate]),
                vec![filter0.clone()],
            );
            u.table = Some(t0.name.clone());
            u
        }
        Template::Insert => {
            let target = db.table(&spec.tables[1])?;
            let rows = n0 * sel;
            let mut ins = PhysNode::new(
                Role::Insert,
                rows,
                rows * cm.write_per_row,
                bits(&[RedundantIndex, LargeInsert]),
                vec![filter0.clone()],
            );
            ins.table = Some(target.name.clone());
            ins
        }
    };
    Ok(root)
}

fn natural_order(spec: &QuerySpec) -> Vec<usize> {
    (0..spec.tables.len()).collect()
}

fn noiseless(spec: &QuerySpec, db: &DbState, cm: &CostModel) -> Result<f64> {
    let plan = build_physical(spec, db, cm, &natural_order(spec))?;
    let mut total = 0.0;
    plan.visit(&mut |n| total += n.base_s * cm.multiplier(n.affects, &spec.severities));
    Ok(total)
}

/// Simulated runtime in seconds. `noise_seed: None` gives the noiseless value;
/// otherwise a lognormal factor drawn from a generator seeded with it.
pub fn simulate_runtime(spec: &QuerySpec, sim: &Simulator, noise_seed: Option<u64>) -> Result<f64> {
    let base = noiseless(spec, &sim.db, &sim.cost)?;
    Ok(match noise_seed {
        None => base,
        Some(seed) => {
            base * noise_factor(sim.cost.noise_sigma, &mut ChaCha8Rng::seed_from_u64(seed))
        }
    })
}

pub(crate) fn noise_factor(sigma: f64, rng: &mut ChaCha8Rng) -> f64 {
    if sigma <= 0.0 {
        return 1.0;
    }
    LogNormal::new(0.0, sigma).expect("valid sigma").sample(rng)
}

/// Fractional runtime saving of fixing root cause `rc`.
pub fn impact_from_runtimes(original: f64, revised: f64) -> Result<f64> {
    if !(original > 0.0) {
        return Err(Error::DegenerateSpec(
            "original runtime must be positive".into(),
        ));
    }
    Ok((original - revised) / original)
}

pub fn compute_impact(spec: &QuerySpec, rc: usize, sim: &Simulator) -> Result<f64> {
    if rc >= spec.severities.len() {
        return Err(Error::InvalidInput(format!(
            "root cause index {rc} out of range"
        )));
    }
    let before = simulate_runtime(spec, sim, None)?;
    let after = simulate_runtime(&super::spec::revise(spec, rc), sim, None)?;
    impact_from_runtimes(before, after)
}

/// Impacts over the whole catalog.
pub fn impact_vector(spec: &QuerySpec, sim: &Simulator) -> Result<Vec<f64>> {
    (0..spec.severities.len())
        .map(|j| compute_impact(spec, j, sim))
        .collect()
}

/// Catalog positions whose defect can influence this spec's runtime.
pub fn applicable_causes(spec: &QuerySpec, sim: &Simulator) -> Result<Vec<bool>> {
    let plan = build_physical(spec, &sim.db, &sim.cost, &natural_order(spec))?;
    let mask = plan.affect_mask();
    Ok((0..sim.catalog.len())
        .map(|j| mask & (1 << j) != 0)
        .collect())
}
