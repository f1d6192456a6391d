use serde::{Deserialize, Serialize};

use crate::domain::log::field_index;
use crate::domain::plan::OperatorKind;
use crate::domain::sql::Vocab;
use crate::domain::QueryRecord;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairKind {
    Table,
    Column,
    Predicate,
    Operation,
    Numeric,
}

impl PairKind {
    pub fn is_identifier(self) -> bool {
        self != PairKind::Numeric
    }
}

/// A location in one modality.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Span {
    /// Token positions `start..start + len`.
    Sql {
        start: usize,
        len: usize,
    },
    PlanNode(usize),
    LogField(usize),
}

/// Two locations in different modalities that describe the same thing.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlignmentPair {
    pub kind: PairKind,
    pub a: Span,
    pub b: Span,
}

/// Numeric agreement window for log-to-plan pairs.
const NUMERIC_RATIO: (f64, f64) = (0.5, 2.0);

fn find_pieces(texts: &[&str], pieces: &[String]) -> Option<usize> {
    if pieces.is_empty() || pieces.len() > texts.len() {
        return None;
    }
    (0..=texts.len() - pieces.len())
        .find(|&s| pieces.iter().enumerate().all(|(k, p)| texts[s + k] == p))
}

pub(super) fn operation_keyword(kind: OperatorKind) -> Option<&'static str> {
    match kind {
        OperatorKind::HashJoin | OperatorKind::NestedLoopJoin | OperatorKind::MergeJoin => {
            Some("join")
        }
        OperatorKind::Filter => Some("where"),
        OperatorKind::Aggregate => Some("group"),
        OperatorKind::Sort => Some("order"),
        OperatorKind::Update => Some("update"),
        OperatorKind::Insert => Some("insert"),
        _ => None,
    }
}

/// Identifier and numeric correspondences between the SQL text, the plan
/// and the log of one record.
///
/// Each plan table or column annotation is paired with its first exact
/// occurrence in the token stream. The k-th `join`/`where`/`group`/... keyword
/// is paired with the k-th plan node of the matching operator family, in
/// topological order. The log's `rows_returned` and `duration_ms` are paired
/// with the plan root when they agree with its estimates within a factor of 2.
pub fn match_critical_spans(record: &QueryRecord) -> Vec<AlignmentPair> {
    let texts = record.sql.texts();
    let plan = &record.plan;
    let mut out = Vec::new();
    for &i in plan.topological_order() {
        let node = &plan.nodes()[i];
        if let Some(table) = &node.table {
            let pieces = Vocab::identifier_pieces(table);
            if let Some(start) = find_pieces(&texts, &pieces) {
                out.push(AlignmentPair {
                    kind: PairKind::Table,
                    a: Span::Sql {
                        start,
                        len: pieces.len(),
                    },
                    b: Span::PlanNode(i),
                });
            }
        }
        for col in &node.columns {
            let pieces = Vocab::identifier_pieces(col);
            if let Some(start) = find_pieces(&texts, &pieces) {
                let kind = if node.kind == OperatorKind::Filter || node.kind.is_scan() {
                    PairKind::Predicate
                } else {
                    PairKind::Column
                };
                out.push(AlignmentPair {
                    kind,
                    a: Span::Sql {
                        start,
                        len: pieces.len(),
                    },
                    b: Span::PlanNode(i),
                });
            }
        }
    }
    for kw in ["join", "where", "group", "order", "update", "insert"] {
        let nodes = plan
            .topological_order()
            .iter()
            .copied()
            .filter(|&i| operation_keyword(plan.nodes()[i].kind) == Some(kw));
        let tokens = texts
            .iter()
            .enumerate()
            .filter(|(_, t)| **t == kw)
            .map(|(p, _)| p);
        for (node, pos) in nodes.zip(tokens) {
            out.push(AlignmentPair {
                kind: PairKind::Operation,
                a: Span::Sql { start: pos, len: 1 },
                b: Span::PlanNode(node),
            });
        }
    }
    let root = &plan.nodes()[plan.root()];
    for (field, estimate) in [
        ("rows_returned", root.est_rows),
        ("duration_ms", root.est_cost),
    ] {
        let slot = field_index(field).expect("known log field");
        let observed = record.log.values()[slot];
        if observed > 0.0 && estimate > 0.0 {
            let ratio = observed / estimate;
            if ratio >= NUMERIC_RATIO.0 && ratio <= NUMERIC_RATIO.1 {
                out.push(AlignmentPair {
                    kind: PairKind::Numeric,
                    a: Span::LogField(slot),
                    b: Span::PlanNode(plan.root()),
                });
            }
        }
    }
    out
}
