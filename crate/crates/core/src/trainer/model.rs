use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::diffcore::{Checkpoint, Graph, ParamStore, Var};
use crate::domain::sql::Vocab;
use crate::domain::{KpiNorm, LogNorm, QueryRecord};
use crate::encoders::{
    prepare_record, EncoderConfig, Encoders, Modality, PreparedInput, RecordEmbeddings,
};
use crate::error::{Error, Result};
use crate::fusion::{Cmt, Fusion, FusionConfig};
use crate::nn::Mlp;

/// Which parts of the network produce the estimates.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    /// Common and gated adaptive fusion with impact heads.
    #[default]
    Full,
    /// Pooled vectors of all four modalities concatenated into an MLP.
    Concat,
    /// Adaptive fusion over ungated inputs; per-cause heads carry all
    /// cause specificity.
    NoGate,
    /// Pooled vector of one modality into an MLP.
    Only(Modality),
    /// Pooled plan and KPI vectors concatenated into an MLP.
    PlanKpiConcat,
}

impl Architecture {
    fn pooled_inputs(self) -> Option<Vec<Modality>> {
        match self {
            Architecture::Concat => Some(Modality::ALL.to_vec()),
            Architecture::Only(m) => Some(vec![m]),
            Architecture::PlanKpiConcat => Some(vec![Modality::Plan, Modality::Kpi]),
            Architecture::Full | Architecture::NoGate => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub fusion: FusionConfig,
    pub architecture: Architecture,
    /// One impact head per root cause instead of a shared one.
    pub per_cause_heads: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            encoder: EncoderConfig::default(),
            fusion: FusionConfig::default(),
            architecture: Architecture::Full,
            per_cause_heads: false,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        if self.fusion.d != self.encoder.d {
            return Err(Error::InvalidConfig(format!(
                "fusion width {} differs from encoder width {}",
                self.fusion.d, self.encoder.d
            )));
        }
        Ok(())
    }

    /// Set the same dropout rate everywhere.
    pub fn set_dropout(&mut self, rate: f64) {
        self.encoder.dropout = rate;
        self.fusion.dropout = rate;
    }
}

#[derive(Clone, Debug)]
enum Heads {
    Shared(Mlp),
    PerCause(Vec<Mlp>),
}

impl Heads {
    fn new<R: Rng>(
        store: &mut ParamStore,
        d: usize,
        r: usize,
        per_cause: bool,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(if per_cause {
            Heads::PerCause(
                (0..r)
                    .map(|j| Mlp::new(store, &format!("heads/{j}"), &[d, d, 1], rng))
                    .collect::<Result<_>>()?,
            )
        } else {
            Heads::Shared(Mlp::new(store, "head", &[d, d, 1], rng)?)
        })
    }

    /// `feats` is `[r, d]`, or `[1, d]` shared by every head; result `[1, r]`.
    fn forward(&self, g: &mut Graph, feats: Var, r: usize) -> Result<Var> {
        match self {
            Heads::Shared(mlp) => {
                let out = mlp.forward(g, feats)?;
                let rows = g.shape(out)[0];
                let out = g.reshape(out, &[1, rows])?;
                if rows == r {
                    Ok(out)
                } else {
                    Err(Error::shape("heads", &[1, rows], &[1, r]))
                }
            }
            Heads::PerCause(mlps) => {
                let shared = g.shape(feats)[0] == 1;
                let mut cols = Vec::with_capacity(r);
                for (j, mlp) in mlps.iter().enumerate() {
                    let row = if shared {
                        feats
                    } else {
                        g.slice(feats, 0, j, 1)?
                    };
                    cols.push(mlp.forward(g, row)?);
                }
                g.concat(&cols, 1)
            }
        }
    }
}

#[derive(Clone, Debug)]
enum Body {
    Fused {
        fusion: Fusion,
        heads: Heads,
    },
    NoGate {
        common: Cmt,
        adaptive: Cmt,
        main: Modality,
        heads: Heads,
    },
    Pooled {
        inputs: Vec<Modality>,
        mlp: Mlp,
    },
}

/// A trained or freshly initialised impact estimator together with the
/// normalisation and catalog it was trained with.
#[derive(Clone, Debug)]
pub struct RCRankModel {
    pub config: ModelConfig,
    pub catalog: Vec<String>,
    pub log_norm: LogNorm,
    pub kpi_norm: KpiNorm,
    pub store: ParamStore,
    pub encoders: Encoders,
    body: Body,
}

impl RCRankModel {
    pub fn new<R: Rng>(
        config: &ModelConfig,
        catalog: Vec<String>,
        log_norm: LogNorm,
        kpi_norm: KpiNorm,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        let r = catalog.len();
        if r == 0 {
            return Err(Error::InvalidConfig("empty root-cause catalog".into()));
        }
        let d = config.encoder.d;
        let mut store = ParamStore::new();
        let encoders = Encoders::new(&mut store, &config.encoder, rng)?;
        let body = match config.architecture {
            Architecture::Full => Body::Fused {
                fusion: Fusion::new(&mut store, &config.fusion, r, rng)?,
                heads: Heads::new(&mut store, d, r, config.per_cause_heads, rng)?,
            },
            Architecture::NoGate => Body::NoGate {
                common: Cmt::new(&mut store, "cmt_common", &config.fusion, rng)?,
                adaptive: Cmt::new(&mut store, "cmt_adaptive", &config.fusion, rng)?,
                main: config.fusion.main,
                heads: Heads::new(&mut store, d, r, true, rng)?,
            },
            arch => {
                let inputs = arch.pooled_inputs().expect("pooled architecture");
                let mlp = Mlp::new(&mut store, "pooled_head", &[inputs.len() * d, d, r], rng)?;
                Body::Pooled { inputs, mlp }
            }
        };
        Ok(RCRankModel {
            config: config.clone(),
            catalog,
            log_norm,
            kpi_norm,
            store,
            encoders,
            body,
        })
    }

    pub fn r(&self) -> usize {
        self.catalog.len()
    }

    /// Standardise and tokenize one record with this model's settings.
    pub fn prepare(&self, record: &QueryRecord) -> Result<PreparedInput> {
        let cfg = &self.config.encoder;
        if (record.kpis.q(), record.kpis.t()) != (cfg.kpi_q, cfg.kpi_t) {
            return Err(Error::shape(
                "prepare",
                &[record.kpis.q(), record.kpis.t()],
                &[cfg.kpi_q, cfg.kpi_t],
            ));
        }
        prepare_record(
            record,
            &self.log_norm,
            &self.kpi_norm,
            cfg.max_sql_len,
            &Vocab::standard(),
        )
    }

    fn embed(&self, g: &mut Graph, x: &PreparedInput) -> Result<RecordEmbeddings> {
        self.encoders.encode(g, x)
    }

    /// Estimated impacts `[1, r]`.
    pub fn forward(&self, g: &mut Graph, x: &PreparedInput) -> Result<Var> {
        let r = self.r();
        match &self.body {
            Body::Fused { fusion, heads } => {
                let e = self.embed(g, x)?;
                let fused = fusion.fuse(g, &e)?;
                heads.forward(g, fused.final_, r)
            }
            Body::NoGate {
                common,
                adaptive,
                main,
                heads,
            } => {
                let e = self.embed(g, x)?;
                let inputs = Modality::ALL.map(|m| e.get(m).positions);
                let start = e.get(*main).pooled;
                let c = common.forward(g, start, &inputs)?;
                let a = adaptive.forward(g, start, &inputs)?;
                let f = g.add(c, a)?;
                heads.forward(g, f, r)
            }
            Body::Pooled { inputs, mlp } => {
                let mut parts = Vec::with_capacity(inputs.len());
                for &m in inputs {
                    let e = match m {
                        Modality::Sql => self.encoders.encode_sql(g, x)?,
                        Modality::Plan => self.encoders.encode_plan(g, x)?,
                        Modality::Log => self.encoders.encode_log(g, x)?,
                        Modality::Kpi => self.encoders.encode_kpi(g, x)?,
                    };
                    parts.push(e.pooled);
                }
                let h = if parts.len() == 1 {
                    parts[0]
                } else {
                    g.concat(&parts, 1)?
                };
                mlp.forward(g, h)
            }
        }
    }

    /// Evaluation-mode estimates for one prepared input.
    pub fn estimate(&self, x: &PreparedInput) -> Result<Vec<f64>> {
        let mut g = Graph::new(&self.store);
        let y = self.forward(&mut g, x)?;
        let y = g.value(y).data().to_vec();
        if y.iter().all(|v| v.is_finite()) {
            Ok(y)
        } else {
            Err(Error::Numerical("impact estimates".into()))
        }
    }

    /// Estimates for many inputs, evaluated in parallel.
    pub fn estimate_all(&self, xs: &[PreparedInput]) -> Result<Vec<Vec<f64>>> {
        xs.par_iter().map(|x| self.estimate(x)).collect()
    }

    pub fn estimate_record(&self, record: &QueryRecord) -> Result<Vec<f64>> {
        self.estimate(&self.prepare(record)?)
    }

    /// Copy encoder weights from a pretraining checkpoint.
    pub fn load_pretrained(&mut self, ckpt: &Checkpoint) -> Result<usize> {
        let n = ckpt.load_into(
            &mut self.store,
            &["enc_s/", "enc_p/", "enc_l/", "enc_i/", "dec_i/"],
        )?;
        if n == 0 {
            return Err(Error::Checkpoint(
                "no encoder tensors in pretraining checkpoint".into(),
            ));
        }
        Ok(n)
    }

    pub fn metadata(&self, extra: Value) -> Value {
        json!({
            "kind": "rcrank",
            "model": self.config,
            "catalog": self.catalog,
            "log_norm": self.log_norm,
            "kpi_norm": self.kpi_norm,
            "train": extra,
        })
    }

    pub fn checkpoint(&self, extra: Value) -> Checkpoint {
        Checkpoint::from_store(&self.store, self.metadata(extra))
    }

    /// Rebuild a model from a checkpoint written by [`RCRankModel::checkpoint`].
    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let meta = &ckpt.metadata;
        if meta.get("kind").and_then(Value::as_str) != Some("rcrank") {
            return Err(Error::Checkpoint("not a trained model checkpoint".into()));
        }
        let field = |k: &str| {
            meta.get(k)
                .cloned()
                .ok_or_else(|| Error::Checkpoint(format!("metadata lacks `{k}`")))
        };
        let config: ModelConfig = serde_json::from_value(field("model")?)?;
        let catalog: Vec<String> = serde_json::from_value(field("catalog")?)?;
        let log_norm: LogNorm = serde_json::from_value(field("log_norm")?)?;
        let kpi_norm: KpiNorm = serde_json::from_value(field("kpi_norm")?)?;
        let mut model = RCRankModel::new(
            &config,
            catalog,
            log_norm,
            kpi_norm,
            &mut ChaCha8Rng::seed_from_u64(0),
        )?;
        if ckpt.tensors.len() != model.store.len() {
            return Err(Error::Checkpoint(format!(
                "checkpoint has {} tensors, model expects {}",
                ckpt.tensors.len(),
                model.store.len()
            )));
        }
        ckpt.load_into(&mut model.store, &[""])?;
        Ok(model)
    }
}
