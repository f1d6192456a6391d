//! Query records and their four modalities: SQL text, execution plan,
//! execution log and instance KPIs.

pub mod dataset;
pub mod kpi;
pub mod log;
pub mod plan;
pub mod record;
pub mod sql;

pub use dataset::{assign_splits, load_dataset, save_dataset, split_dataset, DataSplit, Dataset};
pub use kpi::{KpiMatrix, KpiNorm, DEFAULT_Q, DEFAULT_T, KPI_CHANNELS};
pub use log::{vectorize_log, LogNorm, LogVector, LOG_DIM, LOG_FIELDS};
pub use plan::{parse_plan, OperatorKind, PlanDag, PlanNode, PlanTree};
pub use record::{QueryRecord, Split};
pub use sql::{tokenize_sql, tokenize_sql_with_limit, Token, TokenSeq, Vocab};
