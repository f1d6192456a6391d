//! Per-modality encoders into a shared `d`-wide space, and the KPI decoder.
//!
//! Records are first turned into a [`PreparedInput`] (token ids, plan
//! features, normalised log and KPI values). The encoders then build graph
//! nodes from prepared inputs, so masking for pretraining is an edit of the
//! prepared form.

mod prepare;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diffcore::{Graph, ParamId, ParamStore, Tensor, Var};
use crate::domain::log::LOG_DIM;
use crate::domain::plan::OperatorKind;
use crate::domain::sql::{Vocab, DEFAULT_MAX_SQL_LEN};
use crate::domain::{DEFAULT_Q, DEFAULT_T};
use crate::error::{Error, Result};
use crate::nn::{sinusoidal_positions, EncoderLayer, LayerNorm, Linear, Mlp};

pub use prepare::{prepare_record, PreparedInput, PreparedPlan, DIST_BUCKETS};

/// Plan operator slot used for masked nodes.
pub const MASK_KIND: usize = OperatorKind::ALL.len();

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    Sql,
    Plan,
    Log,
    Kpi,
}

impl Modality {
    pub const ALL: [Modality; 4] = [Modality::Sql, Modality::Plan, Modality::Log, Modality::Kpi];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Modality::Sql => "sql",
            Modality::Plan => "plan",
            Modality::Log => "log",
            Modality::Kpi => "kpi",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Modality::ALL
            .into_iter()
            .find(|m| m.name() == s.to_ascii_lowercase())
            .ok_or_else(|| Error::InvalidConfig(format!("unknown modality `{s}`")))
    }
}

impl std::fmt::Display for Modality {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    pub d: usize,
    pub sql_layers: usize,
    pub sql_heads: usize,
    pub max_sql_len: usize,
    pub plan_layers: usize,
    pub plan_heads: usize,
    pub structural_bias: bool,
    pub log_hidden: Vec<usize>,
    pub kpi_channels: [usize; 2],
    pub kpi_q: usize,
    pub kpi_t: usize,
    pub dropout: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            d: 32,
            sql_layers: 2,
            sql_heads: 4,
            max_sql_len: DEFAULT_MAX_SQL_LEN,
            plan_layers: 2,
            plan_heads: 4,
            structural_bias: true,
            log_hidden: vec![64, 32],
            kpi_channels: [4, 8],
            kpi_q: DEFAULT_Q,
            kpi_t: DEFAULT_T,
            dropout: 0.1,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d == 0
            || self.d % self.sql_heads.max(1) != 0
            || self.d % self.plan_heads.max(1) != 0
        {
            return Err(Error::InvalidConfig(format!(
                "width {} must be divisible by the head counts",
                self.d
            )));
        }
        if self.sql_heads == 0 || self.plan_heads == 0 || self.max_sql_len == 0 {
            return Err(Error::InvalidConfig(
                "head counts and max length must be positive".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::InvalidConfig(format!(
                "dropout {} outside [0, 1)",
                self.dropout
            )));
        }
        if self.kpi_q == 0 || self.kpi_t == 0 || self.kpi_channels.contains(&0) {
            return Err(Error::InvalidConfig(
                "KPI shape and channels must be positive".into(),
            ));
        }
        Ok(())
    }

    fn kpi_conv_out(&self) -> (usize, usize) {
        // Stage 1 keeps the grid (stride 1, pad 1); stage 2 halves it (stride 2, pad 1).
        ((self.kpi_q - 1) / 2 + 1, (self.kpi_t - 1) / 2 + 1)
    }
}

/// Encoder output inside a graph: one row per position plus a pooled row.
#[derive(Clone, Copy, Debug)]
pub struct ModalEmbedding {
    /// `[n_positions, d]`
    pub positions: Var,
    /// `[1, d]`
    pub pooled: Var,
}

#[derive(Clone, Debug)]
pub struct SqlEncoder {
    pub tokens: ParamId,
    pub layers: Vec<EncoderLayer>,
    pub norm: LayerNorm,
}

impl SqlEncoder {
    fn new<R: Rng>(store: &mut ParamStore, cfg: &EncoderConfig, rng: &mut R) -> Result<Self> {
        let vocab = Vocab::standard().len();
        Ok(SqlEncoder {
            tokens: store.add_uniform("enc_s/tokens", &[vocab, cfg.d], 1.0, rng)?,
            layers: (0..cfg.sql_layers)
                .map(|i| {
                    EncoderLayer::new(
                        store,
                        &format!("enc_s/layer{i}"),
                        cfg.d,
                        cfg.sql_heads,
                        cfg.dropout,
                        rng,
                    )
                })
                .collect::<Result<_>>()?,
            norm: LayerNorm::new(store, "enc_s/norm", cfg.d)?,
        })
    }

    pub fn forward(&self, g: &mut Graph, ids: &[usize]) -> Result<ModalEmbedding> {
        if ids.is_empty() {
            return Err(Error::InvalidInput("empty token sequence".into()));
        }
        let table = g.param(self.tokens);
        let d = g.shape(table)[1];
        let x = g.embedding(table, ids)?;
        let pos = g.constant(sinusoidal_positions(ids.len(), d))?;
        let mut h = g.add(x, pos)?;
        for layer in &self.layers {
            h = layer.forward(g, h, None)?;
        }
        let h = self.norm.forward(g, h)?;
        let pooled = g.mean_rows(h)?;
        Ok(ModalEmbedding {
            positions: h,
            pooled,
        })
    }
}

#[derive(Clone, Debug)]
pub struct PlanEncoder {
    pub kinds: ParamId,
    pub idents: ParamId,
    pub numeric: Linear,
    /// One `[1, DIST_BUCKETS]` score table per layer.
    pub bias: Vec<ParamId>,
    pub layers: Vec<EncoderLayer>,
    pub norm: LayerNorm,
}

impl PlanEncoder {
    fn new<R: Rng>(store: &mut ParamStore, cfg: &EncoderConfig, rng: &mut R) -> Result<Self> {
        let vocab = Vocab::standard().len();
        let mut bias = Vec::new();
        if cfg.structural_bias {
            for i in 0..cfg.plan_layers {
                bias.push(store.add_const(
                    format!("enc_p/layer{i}/dist_bias"),
                    &[1, DIST_BUCKETS],
                    0.0,
                )?);
            }
        }
        Ok(PlanEncoder {
            kinds: store.add_uniform("enc_p/kinds", &[MASK_KIND + 1, cfg.d], 1.0, rng)?,
            idents: store.add_uniform("enc_p/idents", &[vocab, cfg.d], 0.5, rng)?,
            numeric: Linear::new(store, "enc_p/numeric", 2, cfg.d, rng)?,
            bias,
            layers: (0..cfg.plan_layers)
                .map(|i| {
                    EncoderLayer::new(
                        store,
                        &format!("enc_p/layer{i}"),
                        cfg.d,
                        cfg.plan_heads,
                        cfg.dropout,
                        rng,
                    )
                })
                .collect::<Result<_>>()?,
            norm: LayerNorm::new(store, "enc_p/norm", cfg.d)?,
        })
    }

    pub fn forward(&self, g: &mut Graph, plan: &PreparedPlan) -> Result<ModalEmbedding> {
        let n = plan.kinds.len();
        let kinds = g.param(self.kinds);
        let mut x = g.embedding(kinds, &plan.kinds)?;
        let num = g.constant(Tensor::new(vec![n, 2], plan.numeric.clone())?)?;
        let num = self.numeric.forward(g, num)?;
        x = g.add(x, num)?;
        if let Some((ids, avg)) = plan.ident_average() {
            let table = g.param(self.idents);
            let e = g.embedding(table, &ids)?;
            let avg = g.constant(avg)?;
            let e = g.matmul(avg, e)?;
            x = g.add(x, e)?;
        }
        for (i, layer) in self.layers.iter().enumerate() {
            let bias = match self.bias.get(i) {
                Some(&b) if n > 1 => {
                    let table = g.param(b);
                    let flat = g.select_cols(table, &plan.buckets)?;
                    Some(g.reshape(flat, &[n, n])?)
                }
                _ => None,
            };
            x = layer.forward(g, x, bias)?;
        }
        let h = self.norm.forward(g, x)?;
        let pooled = g.slice(h, 0, plan.root, 1)?;
        Ok(ModalEmbedding {
            positions: h,
            pooled,
        })
    }
}

#[derive(Clone, Debug)]
pub struct LogEncoder {
    pub mlp: Mlp,
}

impl LogEncoder {
    fn new<R: Rng>(store: &mut ParamStore, cfg: &EncoderConfig, rng: &mut R) -> Result<Self> {
        let mut sizes = vec![LOG_DIM];
        sizes.extend(&cfg.log_hidden);
        sizes.push(cfg.d);
        Ok(LogEncoder {
            mlp: Mlp::new(store, "enc_l/mlp", &sizes, rng)?,
        })
    }

    /// `log` holds z-scores; they are squashed with `asinh` before the MLP.
    pub fn forward(&self, g: &mut Graph, log: &[f64; LOG_DIM]) -> Result<ModalEmbedding> {
        let x: Vec<f64> = log.iter().map(|v| v.asinh()).collect();
        let x = g.constant(Tensor::row(&x))?;
        let h = self.mlp.forward(g, x)?;
        Ok(ModalEmbedding {
            positions: h,
            pooled: h,
        })
    }
}

#[derive(Clone, Debug)]
pub struct KpiEncoder {
    pub k1: ParamId,
    pub b1: ParamId,
    pub k2: ParamId,
    pub b2: ParamId,
    pub proj: Linear,
    pub q: usize,
    pub t: usize,
}

impl KpiEncoder {
    fn new<R: Rng>(store: &mut ParamStore, cfg: &EncoderConfig, rng: &mut R) -> Result<Self> {
        let [c1, c2] = cfg.kpi_channels;
        let (ho, wo) = cfg.kpi_conv_out();
        let b1 = (6.0 / (9.0 + 9.0 * c1 as f64)).sqrt();
        let b2 = (6.0 / (9.0 * (c1 + c2) as f64)).sqrt();
        Ok(KpiEncoder {
            k1: store.add_uniform("enc_i/conv1/kernel", &[c1, 1, 3, 3], b1, rng)?,
            b1: store.add_const("enc_i/conv1/bias", &[1, c1], 0.0)?,
            k2: store.add_uniform("enc_i/conv2/kernel", &[c2, c1, 3, 3], b2, rng)?,
            b2: store.add_const("enc_i/conv2/bias", &[1, c2], 0.0)?,
            proj: Linear::new(store, "enc_i/proj", c2 * ho * wo, cfg.d, rng)?,
            q: cfg.kpi_q,
            t: cfg.kpi_t,
        })
    }

    /// `kpi` is the normalised `q x t` grid, row-major by channel.
    pub fn forward(&self, g: &mut Graph, kpi: &[f64]) -> Result<ModalEmbedding> {
        if kpi.len() != self.q * self.t {
            return Err(Error::shape("encode_kpi", &[kpi.len()], &[self.q, self.t]));
        }
        let x = g.constant(Tensor::new(vec![1, self.q, self.t], kpi.to_vec())?)?;
        let (k1, b1, k2, b2) = (
            g.param(self.k1),
            g.param(self.b1),
            g.param(self.k2),
            g.param(self.b2),
        );
        let h = g.conv2d(x, k1, b1, 1, 1)?;
        let h = g.relu(h)?;
        let h = g.conv2d(h, k2, b2, 2, 1)?;
        let h = g.relu(h)?;
        let n = g.value(h).len();
        let h = g.reshape(h, &[1, n])?;
        let h = self.proj.forward(g, h)?;
        Ok(ModalEmbedding {
            positions: h,
            pooled: h,
        })
    }
}

/// Maps a pooled KPI embedding back onto the normalised `q x t` grid.
#[derive(Clone, Debug)]
pub struct KpiDecoder {
    pub mlp: Mlp,
}

impl KpiDecoder {
    fn new<R: Rng>(store: &mut ParamStore, cfg: &EncoderConfig, rng: &mut R) -> Result<Self> {
        Ok(KpiDecoder {
            mlp: Mlp::new(
                store,
                "dec_i/mlp",
                &[cfg.d, 128, cfg.kpi_q * cfg.kpi_t],
                rng,
            )?,
        })
    }

    /// Returns `[1, q * t]`.
    pub fn forward(&self, g: &mut Graph, pooled: Var) -> Result<Var> {
        self.mlp.forward(g, pooled)
    }
}

/// The four encoders and the KPI decoder.
#[derive(Clone, Debug)]
pub struct Encoders {
    pub cfg: EncoderConfig,
    pub sql: SqlEncoder,
    pub plan: PlanEncoder,
    pub log: LogEncoder,
    pub kpi: KpiEncoder,
    pub decoder: KpiDecoder,
}

/// Embeddings of all four modalities for one record.
#[derive(Clone, Copy, Debug)]
pub struct RecordEmbeddings {
    pub sql: ModalEmbedding,
    pub plan: ModalEmbedding,
    pub log: ModalEmbedding,
    pub kpi: ModalEmbedding,
}

impl RecordEmbeddings {
    pub fn get(&self, m: Modality) -> ModalEmbedding {
        match m {
            Modality::Sql => self.sql,
            Modality::Plan => self.plan,
            Modality::Log => self.log,
            Modality::Kpi => self.kpi,
        }
    }
}

impl Encoders {
    /// Register all encoder parameters in `store`, under `enc_s/`, `enc_p/`,
    /// `enc_l/`, `enc_i/` and `dec_i/`.
    pub fn new<R: Rng>(store: &mut ParamStore, cfg: &EncoderConfig, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        Ok(Encoders {
            cfg: cfg.clone(),
            sql: SqlEncoder::new(store, cfg, rng)?,
            plan: PlanEncoder::new(store, cfg, rng)?,
            log: LogEncoder::new(store, cfg, rng)?,
            kpi: KpiEncoder::new(store, cfg, rng)?,
            decoder: KpiDecoder::new(store, cfg, rng)?,
        })
    }

    pub fn encode_sql(&self, g: &mut Graph, input: &PreparedInput) -> Result<ModalEmbedding> {
        self.sql.forward(g, &input.sql_ids)
    }

    pub fn encode_plan(&self, g: &mut Graph, input: &PreparedInput) -> Result<ModalEmbedding> {
        self.plan.forward(g, &input.plan)
    }

    pub fn encode_log(&self, g: &mut Graph, input: &PreparedInput) -> Result<ModalEmbedding> {
        self.log.forward(g, &input.log)
    }

    pub fn encode_kpi(&self, g: &mut Graph, input: &PreparedInput) -> Result<ModalEmbedding> {
        self.kpi.forward(g, &input.kpi)
    }

    pub fn decode_kpi(&self, g: &mut Graph, pooled: Var) -> Result<Var> {
        self.decoder.forward(g, pooled)
    }

    pub fn encode(&self, g: &mut Graph, input: &PreparedInput) -> Result<RecordEmbeddings> {
        Ok(RecordEmbeddings {
            sql: self.encode_sql(g, input)?,
            plan: self.encode_plan(g, input)?,
            log: self.encode_log(g, input)?,
            kpi: self.encode_kpi(g, input)?,
        })
    }
}
