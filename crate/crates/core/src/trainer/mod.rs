//! Impact heads, the training objective, the training loop and diagnosis.

mod loss;
mod model;

use std::fmt::Write as _;
use std::path::Path;

use log::info;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::batch::{accumulate, epoch_order, item_rng};
use crate::diffcore::{Adam, Checkpoint, Graph};
use crate::domain::{Dataset, QueryRecord};
use crate::encoders::PreparedInput;
use crate::error::{Error, Result};
use crate::evalkit::{MetricOptions, MetricsReport};

pub use loss::{
    descending_order, graph_loss, indicator, loss_order, loss_pred, loss_valid, total_loss,
    LossParts, LossWeights, OrderMode,
};
pub use model::{Architecture, ModelConfig, RCRankModel};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch: usize,
    pub epochs: usize,
    pub lr: f64,
    pub lambda: f64,
    pub epsilon: f64,
    pub eta: f64,
    pub seed: u64,
    pub dropout: f64,
    pub order: OrderMode,
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch: 64,
            epochs: 50,
            lr: 3e-4,
            lambda: 7.0,
            epsilon: 0.10,
            eta: 0.02,
            seed: 0,
            dropout: 0.1,
            order: OrderMode::TruthPermuted,
            model: ModelConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if !(self.lambda >= 0.0) {
            return bad("lambda must be non-negative");
        }
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return bad("epsilon must lie in (0, 1)");
        }
        if !(self.eta >= 0.0) {
            return bad("eta must be non-negative");
        }
        if self.batch == 0 || !(self.lr > 0.0) {
            return bad("batch and lr must be positive");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must lie in [0, 1)");
        }
        self.model.validate()
    }

    pub fn weights(&self) -> LossWeights {
        LossWeights {
            lambda: self.lambda,
            epsilon: self.epsilon,
            eta: self.eta,
            order: self.order,
        }
    }

    /// Model configuration with this run's dropout applied.
    pub fn model_config(&self) -> ModelConfig {
        let mut m = self.model.clone();
        m.set_dropout(self.dropout);
        m
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: LossParts,
    pub val: Option<MetricsReport>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Weights of the epoch with the best validation Top1-ACC (the last
    /// epoch when there is no validation data).
    pub model: RCRankModel,
    pub history: Vec<EpochLog>,
    pub best_epoch: usize,
    pub train_seconds: f64,
}

impl TrainOutcome {
    pub fn checkpoint(&self, cfg: &TrainConfig) -> Checkpoint {
        self.model.checkpoint(json!({
            "config": cfg,
            "best_epoch": self.best_epoch,
        }))
    }

    pub fn history_csv(&self) -> String {
        let mut s = String::from("epoch,l_pred,l_valid,l_order,total,val_v_acc,val_top1_acc,val_mse,val_mc_acc,val_tau\n");
        for h in &self.history {
            let _ = write!(
                s,
                "{},{:.6},{:.6},{:.6},{:.6}",
                h.epoch, h.loss.pred, h.loss.valid, h.loss.order, h.loss.total
            );
            match &h.val {
                Some(v) => {
                    let _ = writeln!(
                        s,
                        ",{:.6},{:.6},{:.6},{:.6},{:.6}",
                        v.v_acc, v.top1_acc, v.mse_mean, v.mc_acc, v.tau
                    );
                }
                None => s.push_str(",,,,,\n"),
            }
        }
        s
    }

    /// Write the checkpoint and the training log CSV next to it.
    pub fn save(&self, cfg: &TrainConfig, path: &Path) -> Result<()> {
        self.checkpoint(cfg).save(path)?;
        std::fs::write(path.with_extension("csv"), self.history_csv())?;
        Ok(())
    }
}

/// Prepared inputs and impact labels of the labeled records of `ds`.
pub fn labeled_inputs(
    model: &RCRankModel,
    ds: &Dataset,
) -> Result<(Vec<PreparedInput>, Vec<Vec<f64>>)> {
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for r in ds.labeled() {
        let y = r.impacts.clone().expect("labeled");
        if y.len() != model.r() {
            return Err(Error::shape("labels", &[y.len()], &[model.r()]));
        }
        xs.push(model.prepare(r)?);
        ys.push(y);
    }
    Ok((xs, ys))
}

/// Metrics of `model` on the labeled records of `ds`.
pub fn evaluate_model(
    model: &RCRankModel,
    ds: &Dataset,
    opts: &MetricOptions,
) -> Result<MetricsReport> {
    let (xs, ys) = labeled_inputs(model, ds)?;
    let est = model.estimate_all(&xs)?;
    MetricsReport::compute(&ys, &est, opts)
}

fn check_finite(v: f64, what: &str) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::Numerical(what.to_string()))
    }
}

/// Train a model on the labeled records of `train`, selecting the epoch with
/// the best Top1-ACC on `val`. Encoder weights start from `pretrained` when
/// given.
pub fn train(
    train: &Dataset,
    val: &Dataset,
    pretrained: Option<&Checkpoint>,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let start = std::time::Instant::now();
    let mut init_rng = item_rng(cfg.seed, usize::MAX, 0);
    let mut model = RCRankModel::new(
        &cfg.model_config(),
        train.catalog.clone(),
        train.log_norm.clone(),
        train.kpi_norm.clone(),
        &mut init_rng,
    )?;
    if let Some(ckpt) = pretrained {
        let n = model.load_pretrained(ckpt)?;
        info!("loaded {n} pretrained encoder tensors");
    }
    let (xs, ys) = labeled_inputs(&model, train)?;
    if xs.is_empty() {
        return Err(Error::InsufficientData(
            "no labeled training records".into(),
        ));
    }
    let (val_xs, val_ys) = labeled_inputs(&model, val)?;
    let weights = cfg.weights();
    let opts = MetricOptions {
        epsilon: cfg.epsilon,
        ..MetricOptions::default()
    };
    let adam = Adam::new(cfg.lr);
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, crate::diffcore::ParamStore)> = None;

    for epoch in 0..cfg.epochs {
        let order = epoch_order(cfg.seed, epoch, xs.len());
        let mut sums = LossParts::default();
        for batch in order.chunks(cfg.batch) {
            let (mut grads, parts) = accumulate(&model.store, batch, |&i| {
                let mut g = Graph::training(&model.store, item_rng(cfg.seed, epoch, i));
                let yhat = model.forward(&mut g, &xs[i])?;
                let (loss, parts) = graph_loss(&mut g, yhat, &ys[i], &weights)?;
                Ok((g.backward(loss)?, parts))
            })?;
            grads.scale(1.0 / batch.len() as f64);
            if !grads.is_finite() {
                return Err(Error::Numerical(format!(
                    "training gradients at epoch {epoch}"
                )));
            }
            adam.step(&mut model.store, &grads);
            for p in parts {
                sums.pred += p.pred;
                sums.valid += p.valid;
                sums.order += p.order;
                sums.total += p.total;
            }
        }
        let n = xs.len() as f64;
        let loss = LossParts {
            pred: sums.pred / n,
            valid: sums.valid / n,
            order: sums.order / n,
            total: sums.total / n,
        };
        check_finite(loss.total, "training loss")?;
        let val = if val_xs.is_empty() {
            None
        } else {
            Some(MetricsReport::compute(
                &val_ys,
                &model.estimate_all(&val_xs)?,
                &opts,
            )?)
        };
        match &val {
            Some(v) => {
                info!(
                    "epoch {epoch}: loss {:.5} (pred {:.5} valid {:.5} order {:.5}) val top1 {:.4} v_acc {:.4}",
                    loss.total, loss.pred, loss.valid, loss.order, v.top1_acc, v.v_acc
                );
                if best.as_ref().map_or(true, |(b, _, _)| v.top1_acc > *b) {
                    best = Some((v.top1_acc, epoch, model.store.clone()));
                }
            }
            None => info!("epoch {epoch}: loss {:.5}", loss.total),
        }
        history.push(EpochLog { epoch, loss, val });
    }

    let best_epoch = match best {
        Some((_, epoch, store)) => {
            model.store = store;
            epoch
        }
        None => cfg.epochs.saturating_sub(1),
    };
    Ok(TrainOutcome {
        model,
        history,
        best_epoch,
        train_seconds: start.elapsed().as_secs_f64(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagnosisEntry {
    pub index: usize,
    pub name: String,
    pub impact: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankedDiagnosis {
    /// Causes with an estimated impact of at least `epsilon`, largest first.
    pub causes: Vec<DiagnosisEntry>,
    pub estimates: Vec<f64>,
}

impl RankedDiagnosis {
    pub fn from_estimates(estimates: Vec<f64>, catalog: &[String], epsilon: f64) -> Self {
        let causes = descending_order(&estimates)
            .into_iter()
            .filter(|&j| estimates[j] >= epsilon)
            .map(|j| DiagnosisEntry {
                index: j,
                name: catalog.get(j).cloned().unwrap_or_else(|| format!("rc{j}")),
                impact: estimates[j],
            })
            .collect();
        RankedDiagnosis { causes, estimates }
    }

    pub fn table(&self) -> String {
        let mut s = String::from("rank  root cause              impact\n");
        for (k, c) in self.causes.iter().enumerate() {
            let _ = writeln!(s, "{:<5} {:<23} {:.4}", k + 1, c.name, c.impact);
        }
        if self.causes.is_empty() {
            s.push_str("(no root cause above the validity threshold)\n");
        }
        s
    }
}

/// Estimate, filter by `epsilon` and rank the root causes of one record.
pub fn diagnose(
    model: &RCRankModel,
    record: &QueryRecord,
    epsilon: f64,
) -> Result<RankedDiagnosis> {
    let est = model.estimate_record(record)?;
    Ok(RankedDiagnosis::from_estimates(
        est,
        &model.catalog,
        epsilon,
    ))
}

#[cfg(test)]
mod tests;
