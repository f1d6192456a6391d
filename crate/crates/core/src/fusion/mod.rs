//! Cross-modal fusion: a common cross-modal transformer over all four
//! modalities, per-root-cause gates, and an adaptive transformer over the
//! gated inputs.
//!
//! The attention query is always the running `[1, d]` state seeded with the
//! main modality's pooled vector; keys and values come from every position
//! of each modality.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diffcore::{Graph, ParamId, ParamStore, Var};
use crate::encoders::{ModalEmbedding, Modality, RecordEmbeddings};
use crate::error::{Error, Result};
use crate::nn::{LayerNorm, Linear, Mlp};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FusionConfig {
    pub d: usize,
    pub blocks: usize,
    pub main: Modality,
    /// One adaptive transformer for all root causes (`true`) or one each.
    pub share_adaptive: bool,
    pub dropout: f64,
}

impl Default for FusionConfig {
    fn default() -> Self {
        FusionConfig {
            d: 32,
            blocks: 3,
            main: Modality::Sql,
            share_adaptive: true,
            dropout: 0.1,
        }
    }
}

impl FusionConfig {
    /// Pick the modality that supplies the attention query.
    pub fn configure_main_modality(&mut self, which: Modality) {
        self.main = which;
    }
}

fn square(store: &mut ParamStore, name: String, d: usize, rng: &mut impl Rng) -> Result<ParamId> {
    store.add_xavier(name, d, d, rng)
}

/// `softmax(q k^T / sqrt(d)) v` with `k = kv W_K`, `v = kv W_V`.
///
/// Evaluated as `softmax((q W_K^T) kv^T / sqrt(d)) kv W_V`, which is the same
/// product reassociated so the projections act on single rows.
pub fn cross_attention(g: &mut Graph, q: Var, kv: Var, wk: ParamId, wv: ParamId) -> Result<Var> {
    let d = g.shape(q)[1];
    if g.shape(kv)[1] != d {
        return Err(Error::shape("cross_attention", g.shape(q), g.shape(kv)));
    }
    let (wk, wv) = (g.param(wk), g.param(wv));
    let qk = g.matmul_nt(q, wk)?;
    let s = g.matmul_nt(qk, kv)?;
    let s = g.scale(s, 1.0 / (d as f64).sqrt())?;
    let a = g.softmax(s)?;
    let ctx = g.matmul(a, kv)?;
    g.matmul(ctx, wv)
}

/// Attention weights of [`cross_attention`], `[rows(q), rows(kv)]`.
pub fn attention_weights(g: &mut Graph, q: Var, kv: Var, wk: ParamId) -> Result<Var> {
    let d = g.shape(q)[1];
    let wk = g.param(wk);
    let qk = g.matmul_nt(q, wk)?;
    let s = g.matmul_nt(qk, kv)?;
    let s = g.scale(s, 1.0 / (d as f64).sqrt())?;
    g.softmax(s)
}

#[derive(Clone, Debug)]
pub struct CmtBlock {
    pub wq: ParamId,
    /// Key and value projections per modality, in [`Modality::ALL`] order.
    pub wk: [ParamId; 4],
    pub wv: [ParamId; 4],
    pub ffn: Mlp,
    pub norm: LayerNorm,
    pub dropout: f64,
}

impl CmtBlock {
    fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        d: usize,
        dropout: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let wq = square(store, format!("{name}/wq"), d, rng)?;
        let mut wk = Vec::with_capacity(4);
        let mut wv = Vec::with_capacity(4);
        for m in Modality::ALL {
            wk.push(square(store, format!("{name}/wk_{m}"), d, rng)?);
            wv.push(square(store, format!("{name}/wv_{m}"), d, rng)?);
        }
        Ok(CmtBlock {
            wq,
            wk: wk.try_into().expect("four modalities"),
            wv: wv.try_into().expect("four modalities"),
            ffn: Mlp::new(store, &format!("{name}/ffn"), &[4 * d, d, d], rng)?,
            norm: LayerNorm::new(store, &format!("{name}/norm"), d)?,
            dropout,
        })
    }

    /// One block: attend from `x` into every modality, concatenate, FFN,
    /// residual and layer norm. The main modality's term is its
    /// self-attention, since it supplies the query.
    pub fn forward(&self, g: &mut Graph, x: Var, inputs: &[Var; 4]) -> Result<Var> {
        let wq = g.param(self.wq);
        let q = g.matmul(x, wq)?;
        let mut hs = Vec::with_capacity(4);
        for m in 0..4 {
            hs.push(cross_attention(g, q, inputs[m], self.wk[m], self.wv[m])?);
        }
        let h = g.concat(&hs, 1)?;
        let f = self.ffn.forward(g, h)?;
        let f = g.dropout(f, self.dropout)?;
        let r = g.add(x, f)?;
        self.norm.forward(g, r)
    }
}

/// A stack of cross-modal blocks.
#[derive(Clone, Debug)]
pub struct Cmt {
    pub blocks: Vec<CmtBlock>,
}

impl Cmt {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        cfg: &FusionConfig,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Cmt {
            blocks: (0..cfg.blocks)
                .map(|b| CmtBlock::new(store, &format!("{name}/block{b}"), cfg.d, cfg.dropout, rng))
                .collect::<Result<_>>()?,
        })
    }

    /// `[1, d]` output for the four modality inputs, seeded with `start`.
    pub fn forward(&self, g: &mut Graph, start: Var, inputs: &[Var; 4]) -> Result<Var> {
        let mut x = start;
        for b in &self.blocks {
            x = b.forward(g, x, inputs)?;
        }
        Ok(x)
    }
}

/// `sigmoid(FC(E)) * E` for one (root cause, modality) pair.
#[derive(Clone, Copy, Debug)]
pub struct GateUnit {
    pub fc: Linear,
}

impl GateUnit {
    pub fn gate_values(&self, g: &mut Graph, e: Var) -> Result<Var> {
        let z = self.fc.forward(g, e)?;
        g.sigmoid(z)
    }

    pub fn forward(&self, g: &mut Graph, e: Var) -> Result<Var> {
        let s = self.gate_values(g, e)?;
        g.mul(s, e)
    }
}

/// Graph handles of the fused representation.
#[derive(Clone, Debug)]
pub struct FusedFeatures {
    /// `[1, d]`
    pub common: Var,
    /// `[r, d]`
    pub adaptive: Var,
    /// `[r, d]`; row `j` is `common + adaptive[j]`.
    pub final_: Var,
}

#[derive(Clone, Debug)]
pub struct Fusion {
    pub cfg: FusionConfig,
    pub common: Cmt,
    /// One entry when shared, otherwise one per root cause.
    pub adaptive: Vec<Cmt>,
    /// `gates[j][m]`
    pub gates: Vec<[GateUnit; 4]>,
}

impl Fusion {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        cfg: &FusionConfig,
        r: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if r == 0 || cfg.d == 0 || cfg.blocks == 0 {
            return Err(Error::InvalidConfig(
                "fusion needs r, d and blocks above zero".into(),
            ));
        }
        let common = Cmt::new(store, "cmt_common", cfg, rng)?;
        let adaptive = if cfg.share_adaptive {
            vec![Cmt::new(store, "cmt_adaptive", cfg, rng)?]
        } else {
            (0..r)
                .map(|j| Cmt::new(store, &format!("cmt_adaptive/{j}"), cfg, rng))
                .collect::<Result<_>>()?
        };
        let mut gates = Vec::with_capacity(r);
        for j in 0..r {
            let mut units = Vec::with_capacity(4);
            for m in Modality::ALL {
                let fc = Linear::new(store, &format!("gates/{j}/{m}"), cfg.d, cfg.d, rng)?;
                units.push(GateUnit { fc });
            }
            gates.push(units.try_into().expect("four modalities"));
        }
        Ok(Fusion {
            cfg: cfg.clone(),
            common,
            adaptive,
            gates,
        })
    }

    pub fn r(&self) -> usize {
        self.gates.len()
    }

    /// The main modality is fixed once weights exist.
    pub fn configure_main_modality(&mut self, which: Modality) -> Result<()> {
        if which != self.cfg.main {
            return Err(Error::InvalidState(format!(
                "main modality is {} and weights are already initialised",
                self.cfg.main
            )));
        }
        Ok(())
    }

    fn inputs(e: &RecordEmbeddings) -> [Var; 4] {
        Modality::ALL.map(|m| e.get(m).positions)
    }

    /// Common cross-modal representation `[1, d]`.
    pub fn common(&self, g: &mut Graph, e: &RecordEmbeddings) -> Result<Var> {
        let start = e.get(self.cfg.main).pooled;
        self.common.forward(g, start, &Self::inputs(e))
    }

    /// Gated copy of one modality's embedding for root cause `j`.
    pub fn gate(
        &self,
        g: &mut Graph,
        j: usize,
        m: Modality,
        e: ModalEmbedding,
    ) -> Result<ModalEmbedding> {
        let unit = self.gates[j][m.index()];
        let positions = unit.forward(g, e.positions)?;
        let pooled = if e.pooled == e.positions {
            positions
        } else {
            unit.forward(g, e.pooled)?
        };
        Ok(ModalEmbedding { positions, pooled })
    }

    /// Adaptive representation for root cause `j`, `[1, d]`.
    pub fn adaptive_for(
        &self,
        g: &mut Graph,
        j: usize,
        e: &RecordEmbeddings,
        gated: bool,
    ) -> Result<Var> {
        let mut inputs = Self::inputs(e);
        let mut start = e.get(self.cfg.main).pooled;
        if gated {
            for m in Modality::ALL {
                let ge = self.gate(g, j, m, e.get(m))?;
                inputs[m.index()] = ge.positions;
                if m == self.cfg.main {
                    start = ge.pooled;
                }
            }
        }
        let cmt = if self.adaptive.len() == 1 {
            &self.adaptive[0]
        } else {
            &self.adaptive[j]
        };
        cmt.forward(g, start, &inputs)
    }

    /// Full fusion: common plus per-root-cause adaptive features.
    pub fn fuse(&self, g: &mut Graph, e: &RecordEmbeddings) -> Result<FusedFeatures> {
        let common = self.common(g, e)?;
        let rows = (0..self.r())
            .map(|j| self.adaptive_for(g, j, e, true))
            .collect::<Result<Vec<_>>>()?;
        let adaptive = if rows.len() == 1 {
            rows[0]
        } else {
            g.concat(&rows, 0)?
        };
        let final_ = g.add(adaptive, common)?;
        Ok(FusedFeatures {
            common,
            adaptive,
            final_,
        })
    }
}
