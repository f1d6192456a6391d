//! Workload simulator with an exact impact oracle.
//!
//! A [`QuerySpec`] describes a query shape plus planted defect severities.
//! The cost model times it, [`revise`] removes one defect, and the ratio of
//! the two noiseless runtimes is the ground-truth impact.

pub mod catalog;
pub mod db;
pub mod generate;
pub mod render;
pub mod sim;
pub mod spec;

pub use catalog::{CatalogKind, RootCause, RootCauseCatalog};
pub use db::{DbState, KpiBaseline, Table};
pub use generate::{build_simulator, generate_workload, labels_separated, sample_spec, GenConfig};
pub use render::{render_kpis, render_log, render_plan, render_sql};
pub use sim::{
    applicable_causes, compute_impact, impact_from_runtimes, impact_vector, simulate_runtime,
    CostModel, Simulator,
};
pub use spec::{revise, QuerySpec, Template};
