use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::spans::{AlignmentPair, PairKind, Span};
use crate::domain::sql::MASK;
use crate::encoders::{Modality, PreparedInput, MASK_KIND};

pub const MASK_FRACTION: f64 = 0.15;

/// Value written into a masked log slot (the training mean after standardisation).
pub const LOG_SENTINEL: f64 = 0.0;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskMode {
    /// One coin per sample picks the SQL or the plan side for every selected
    /// identifier pair, so a sample trains one of the SQL/plan terms.
    #[default]
    SingleModality,
    /// One coin per selected pair; SQL and plan terms can share a sample.
    PerPair,
}

/// A masked position whose clean embedding is the regression target.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskTarget {
    pub modality: Modality,
    pub position: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MaskedSample {
    pub input: PreparedInput,
    /// Sorted and free of duplicates.
    pub targets: Vec<MaskTarget>,
    /// Side masked for each selected identifier pair, in selection order.
    pub sides: Vec<Modality>,
}

impl MaskedSample {
    pub fn targets_of(&self, m: Modality) -> Vec<usize> {
        self.targets
            .iter()
            .filter(|t| t.modality == m)
            .map(|t| t.position)
            .collect()
    }
}

fn count(fraction: f64, n: usize) -> usize {
    ((fraction * n as f64).round() as usize).clamp(1, n)
}

/// Mask `fraction` of `pairs` (at least one), or the same fraction of SQL
/// tokens when there are no pairs.
pub fn mask_for_pretraining<R: Rng>(
    input: &PreparedInput,
    pairs: &[AlignmentPair],
    fraction: f64,
    mode: MaskMode,
    rng: &mut R,
) -> MaskedSample {
    let mut out = input.clone();
    let mut targets = Vec::new();
    let mut sides = Vec::new();
    let n_tokens = input.sql_ids.len();
    let mask_sql = |out: &mut PreparedInput, targets: &mut Vec<MaskTarget>, pos: usize| {
        if pos < n_tokens {
            out.sql_ids[pos] = MASK;
            targets.push(MaskTarget {
                modality: Modality::Sql,
                position: pos,
            });
        }
    };

    if pairs.is_empty() {
        if n_tokens > 0 {
            for pos in sample(rng, n_tokens, count(fraction, n_tokens)) {
                mask_sql(&mut out, &mut targets, pos);
            }
        }
    } else {
        let picked = sample(rng, pairs.len(), count(fraction, pairs.len())).into_vec();
        let sample_coin: bool = rng.gen_bool(0.5);
        for idx in picked {
            let pair = pairs[idx];
            if !pair.kind.is_identifier() {
                if let Span::LogField(slot) = pair.a {
                    out.log[slot] = LOG_SENTINEL;
                    targets.push(MaskTarget {
                        modality: Modality::Log,
                        position: 0,
                    });
                }
                continue;
            }
            let sql_side = match mode {
                MaskMode::SingleModality => sample_coin,
                MaskMode::PerPair => rng.gen_bool(0.5),
            };
            if sql_side {
                sides.push(Modality::Sql);
                if let Span::Sql { start, len } = pair.a {
                    for pos in start..start + len {
                        mask_sql(&mut out, &mut targets, pos);
                    }
                }
            } else {
                sides.push(Modality::Plan);
                if let Span::PlanNode(node) = pair.b {
                    if pair.kind == PairKind::Operation {
                        out.plan.kinds[node] = MASK_KIND;
                    } else {
                        out.plan.idents[node] = vec![MASK];
                    }
                    targets.push(MaskTarget {
                        modality: Modality::Plan,
                        position: node,
                    });
                }
            }
        }
    }
    targets.sort_by_key(|t| (t.modality.index(), t.position));
    targets.dedup();
    MaskedSample {
        input: out,
        targets,
        sides,
    }
}
