//! Self-supervised encoder pretraining: masked cross-modal prediction in
//! embedding space plus KPI autoencoding.
//!
//! A sample masks matched spans on one side (SQL tokens, plan nodes or a log
//! field). An aggregator transformer reads the three masked encodings and
//! regresses each masked position's clean embedding, which comes from a
//! dropout-free pass over the unmasked input and is held constant. The KPI
//! encoder and decoder are trained to reconstruct the standardised grid.

mod mask;
mod spans;

use std::fmt::Write as _;
use std::path::Path;

use log::info;
use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::batch::{accumulate, epoch_order, item_rng};
use crate::diffcore::{Adam, Checkpoint, Gradients, Graph, ParamId, ParamStore, Tensor, Var};
use crate::domain::sql::Vocab;
use crate::domain::Dataset;
use crate::encoders::{prepare_record, EncoderConfig, Encoders, Modality, PreparedInput};
use crate::error::{Error, Result};
use crate::nn::{EncoderLayer, Linear};

pub use mask::{
    mask_for_pretraining, MaskMode, MaskTarget, MaskedSample, LOG_SENTINEL, MASK_FRACTION,
};
pub use spans::{match_critical_spans, AlignmentPair, PairKind, Span};

/// Transformer `A` over the concatenated SQL, plan and log positions.
#[derive(Clone, Debug)]
pub struct Aggregator {
    /// One learned offset per modality, `[3, d]`.
    pub types: ParamId,
    pub layer: EncoderLayer,
    pub head: Linear,
}

impl Aggregator {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        d: usize,
        heads: usize,
        dropout: f64,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Aggregator {
            types: store.add_uniform("agg/types", &[3, d], 0.5, rng)?,
            layer: EncoderLayer::new(store, "agg/layer", d, heads, dropout, rng)?,
            head: Linear::new(store, "agg/head", d, d, rng)?,
        })
    }

    /// Predicted embeddings `[k, d]` for `targets`, positions counted within
    /// their own modality. `None` when there is nothing to predict.
    pub fn predict(
        &self,
        g: &mut Graph,
        parts: [Var; 3],
        targets: &[MaskTarget],
    ) -> Result<Option<Var>> {
        if targets.is_empty() {
            return Ok(None);
        }
        let d = g.shape(parts[0])[1];
        for p in &parts[1..] {
            if g.shape(*p)[1] != d {
                return Err(Error::shape("aggregate", g.shape(parts[0]), g.shape(*p)));
            }
        }
        let types = g.param(self.types);
        let mut rows = Vec::with_capacity(3);
        let mut offsets = [0usize; 3];
        let mut total = 0;
        for (k, &p) in parts.iter().enumerate() {
            let n = g.shape(p)[0];
            offsets[k] = total;
            total += n;
            let t = g.slice(types, 0, k, 1)?;
            rows.push(g.add(p, t)?);
        }
        let x = g.concat(&rows, 0)?;
        let h = self.layer.forward(g, x, None)?;
        let mut idx = Vec::with_capacity(targets.len());
        for t in targets {
            let k = match t.modality {
                Modality::Sql => 0,
                Modality::Plan => 1,
                Modality::Log => 2,
                Modality::Kpi => {
                    return Err(Error::InvalidInput("KPI positions are never masked".into()));
                }
            };
            idx.push(offsets[k] + t.position);
        }
        let picked = g.embedding(h, &idx)?;
        Ok(Some(self.head.forward(g, picked)?))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PretrainConfig {
    pub encoder: EncoderConfig,
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub seed: u64,
    pub mask_fraction: f64,
    pub mask_mode: MaskMode,
    pub aggregator_heads: usize,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            encoder: EncoderConfig::default(),
            epochs: 5,
            batch: 64,
            lr: 3e-4,
            seed: 0,
            mask_fraction: MASK_FRACTION,
            mask_mode: MaskMode::default(),
            aggregator_heads: 4,
        }
    }
}

/// Loss components of one sample or one epoch; `None` when no target of
/// that modality was present.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PretrainLoss {
    pub sql: Option<f64>,
    pub plan: Option<f64>,
    pub log: Option<f64>,
    pub kpi: f64,
}

impl PretrainLoss {
    pub fn total(&self) -> f64 {
        self.sql.unwrap_or(0.0) + self.plan.unwrap_or(0.0) + self.log.unwrap_or(0.0) + self.kpi
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PretrainEpoch {
    pub epoch: usize,
    pub loss: PretrainLoss,
    pub total: f64,
}

/// Encoders, KPI decoder and aggregator in one parameter store.
#[derive(Clone, Debug)]
pub struct PretrainModel {
    pub store: ParamStore,
    pub encoders: Encoders,
    pub aggregator: Aggregator,
}

impl PretrainModel {
    pub fn new<R: Rng>(cfg: &PretrainConfig, rng: &mut R) -> Result<Self> {
        let mut store = ParamStore::new();
        let encoders = Encoders::new(&mut store, &cfg.encoder, rng)?;
        let aggregator = Aggregator::new(
            &mut store,
            cfg.encoder.d,
            cfg.aggregator_heads,
            cfg.encoder.dropout,
            rng,
        )?;
        Ok(PretrainModel {
            store,
            encoders,
            aggregator,
        })
    }

    /// Clean embeddings at the masked positions of one modality, `[k, d]`.
    fn clean_targets(
        &self,
        clean: &PreparedInput,
        m: Modality,
        positions: &[usize],
    ) -> Result<Tensor> {
        let mut g = Graph::new(&self.store);
        let e = match m {
            Modality::Sql => self.encoders.encode_sql(&mut g, clean)?,
            Modality::Plan => self.encoders.encode_plan(&mut g, clean)?,
            Modality::Log => self.encoders.encode_log(&mut g, clean)?,
            Modality::Kpi => {
                return Err(Error::InvalidInput("KPI positions are never masked".into()))
            }
        };
        let v = g.value(e.positions);
        let d = v.cols();
        let mut data = Vec::with_capacity(positions.len() * d);
        for &p in positions {
            data.extend_from_slice(v.row_slice(p));
        }
        Tensor::new(vec![positions.len(), d], data)
    }

    /// Build the pretraining loss of one sample in `g`.
    pub fn sample_loss(
        &self,
        g: &mut Graph,
        sample: &MaskedSample,
        clean: &PreparedInput,
    ) -> Result<(Var, PretrainLoss)> {
        let enc = &self.encoders;
        let es = enc.encode_sql(g, &sample.input)?;
        let ep = enc.encode_plan(g, &sample.input)?;
        let el = enc.encode_log(g, &sample.input)?;
        let ei = enc.encode_kpi(g, &sample.input)?;

        let mut parts = PretrainLoss::default();
        let mut terms = Vec::new();
        let preds = self.aggregator.predict(
            g,
            [es.positions, ep.positions, el.positions],
            &sample.targets,
        )?;
        if let Some(preds) = preds {
            let mut row = 0;
            for m in [Modality::Sql, Modality::Plan, Modality::Log] {
                let positions = sample.targets_of(m);
                if positions.is_empty() {
                    continue;
                }
                let k = positions.len();
                let target = g.constant(self.clean_targets(clean, m, &positions)?)?;
                let pred = g.slice(preds, 0, row, k)?;
                row += k;
                let diff = g.sub(pred, target)?;
                let sq = g.mul(diff, diff)?;
                let s = g.sum_all(sq)?;
                let term = g.scale(s, 1.0 / k as f64)?;
                let v = g.value(term).item();
                match m {
                    Modality::Sql => parts.sql = Some(v),
                    Modality::Plan => parts.plan = Some(v),
                    _ => parts.log = Some(v),
                }
                terms.push(term);
            }
        }

        let dec = enc.decode_kpi(g, ei.pooled)?;
        let target = g.constant(Tensor::new(vec![1, clean.kpi.len()], clean.kpi.clone())?)?;
        let diff = g.sub(dec, target)?;
        let sq = g.mul(diff, diff)?;
        let kpi = g.mean_all(sq)?;
        parts.kpi = g.value(kpi).item();
        terms.push(kpi);

        let mut total = terms[0];
        for &t in &terms[1..] {
            total = g.add(total, t)?;
        }
        Ok((total, parts))
    }

    /// Mean squared KPI reconstruction error over `inputs` (eval mode).
    pub fn kpi_reconstruction_error(&self, inputs: &[PreparedInput]) -> Result<f64> {
        let mut sum = 0.0;
        for x in inputs {
            let mut g = Graph::new(&self.store);
            let e = self.encoders.encode_kpi(&mut g, x)?;
            let dec = self.encoders.decode_kpi(&mut g, e.pooled)?;
            let out = g.value(dec).data();
            sum += out
                .iter()
                .zip(&x.kpi)
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
                / out.len() as f64;
        }
        Ok(sum / inputs.len().max(1) as f64)
    }

    pub fn checkpoint(&self, metadata: serde_json::Value) -> Checkpoint {
        Checkpoint::from_store(&self.store, metadata)
    }
}

#[derive(Clone, Debug)]
pub struct PretrainOutcome {
    pub model: PretrainModel,
    pub history: Vec<PretrainEpoch>,
}

impl PretrainOutcome {
    pub fn checkpoint(&self, cfg: &PretrainConfig) -> Checkpoint {
        self.model.checkpoint(json!({
            "kind": "pretrain",
            "config": cfg,
            "history": self.history,
        }))
    }

    pub fn history_csv(&self) -> String {
        history_csv(&self.history)
    }
}

pub fn history_csv(history: &[PretrainEpoch]) -> String {
    let fmt = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x:.6}"));
    let mut s = String::from("epoch,l_sql,l_plan,l_log,l_kpi,total\n");
    for h in history {
        let _ = writeln!(
            s,
            "{},{},{},{},{:.6},{:.6}",
            h.epoch,
            fmt(h.loss.sql),
            fmt(h.loss.plan),
            fmt(h.loss.log),
            h.loss.kpi,
            h.total
        );
    }
    s
}

/// Prepared inputs and alignment pairs for every record of `pool`.
pub fn prepare_pool(
    pool: &Dataset,
    cfg: &EncoderConfig,
) -> Result<Vec<(PreparedInput, Vec<AlignmentPair>)>> {
    let vocab = Vocab::standard();
    pool.records
        .iter()
        .map(|r| {
            let x = prepare_record(r, &pool.log_norm, &pool.kpi_norm, cfg.max_sql_len, &vocab)?;
            Ok((x, match_critical_spans(r)))
        })
        .collect()
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| s / n as f64)
}

/// Pretrain fresh encoders on `pool` (records of any split; impact labels
/// are never read).
pub fn run_pretraining(pool: &Dataset, cfg: &PretrainConfig) -> Result<PretrainOutcome> {
    if pool.is_empty() {
        return Err(Error::InsufficientData("empty pretraining pool".into()));
    }
    if cfg.batch == 0 || !(cfg.lr > 0.0) || !(cfg.mask_fraction > 0.0 && cfg.mask_fraction <= 1.0) {
        return Err(Error::InvalidConfig(
            "batch, lr or mask fraction out of range".into(),
        ));
    }
    if let Some((q, t)) = pool.kpi_shape() {
        if (q, t) != (cfg.encoder.kpi_q, cfg.encoder.kpi_t) {
            return Err(Error::shape(
                "pretrain",
                &[q, t],
                &[cfg.encoder.kpi_q, cfg.encoder.kpi_t],
            ));
        }
    }
    let data = prepare_pool(pool, &cfg.encoder)?;
    let mut init_rng = item_rng(cfg.seed, usize::MAX, 0);
    let mut model = PretrainModel::new(cfg, &mut init_rng)?;
    let adam = Adam::new(cfg.lr);
    let mut history = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let order = epoch_order(cfg.seed, epoch, data.len());
        let mut epoch_parts: Vec<PretrainLoss> = Vec::with_capacity(data.len());
        for batch in order.chunks(cfg.batch) {
            let (mut grads, parts) = accumulate(&model.store, batch, |&i| {
                let mut rng = item_rng(cfg.seed, epoch, i);
                let (clean, pairs) = &data[i];
                let sample =
                    mask_for_pretraining(clean, pairs, cfg.mask_fraction, cfg.mask_mode, &mut rng);
                let mut g = Graph::training(&model.store, rng);
                let (loss, parts) = model.sample_loss(&mut g, &sample, clean)?;
                let grads: Gradients = g.backward(loss)?;
                Ok((grads, parts))
            })?;
            grads.scale(1.0 / batch.len() as f64);
            if !grads.is_finite() {
                return Err(Error::Numerical(format!(
                    "pretraining gradients at epoch {epoch}"
                )));
            }
            adam.step(&mut model.store, &grads);
            epoch_parts.extend(parts);
        }
        let loss = PretrainLoss {
            sql: mean(epoch_parts.iter().filter_map(|p| p.sql)),
            plan: mean(epoch_parts.iter().filter_map(|p| p.plan)),
            log: mean(epoch_parts.iter().filter_map(|p| p.log)),
            kpi: mean(epoch_parts.iter().map(|p| p.kpi)).unwrap_or(0.0),
        };
        let total = mean(epoch_parts.iter().map(|p| p.total())).unwrap_or(0.0);
        if !total.is_finite() {
            return Err(Error::Numerical(format!(
                "pretraining loss at epoch {epoch}"
            )));
        }
        info!(
            "pretrain epoch {epoch}: loss {total:.5} (kpi {:.5})",
            loss.kpi
        );
        history.push(PretrainEpoch { epoch, loss, total });
    }
    Ok(PretrainOutcome { model, history })
}

/// Write the checkpoint and the per-epoch CSV next to it.
pub fn save_pretraining(
    outcome: &PretrainOutcome,
    cfg: &PretrainConfig,
    path: &Path,
) -> Result<()> {
    outcome.checkpoint(cfg).save(path)?;
    std::fs::write(path.with_extension("csv"), outcome.history_csv())?;
    Ok(())
}

#[cfg(test)]
mod tests;
