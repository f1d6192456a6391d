//! Metrics, the variant and lambda harnesses, and the end-to-end runtime
//! improvement check.

mod metrics;
mod report;

use log::info;
use serde::{Deserialize, Serialize};

use crate::diffcore::Checkpoint;
use crate::domain::{Dataset, QueryRecord, Split};
use crate::encoders::Modality;
use crate::error::{Error, Result};
use crate::pretrain::{run_pretraining, PretrainConfig};
use crate::synthgen::{impact_vector, revise, simulate_runtime, Simulator};
use crate::trainer::{evaluate_model, train, Architecture, TrainConfig, TrainOutcome};

pub use metrics::{
    argmax, has_tied_max, kendall_tau, mc_acc, mse_with_std, tau_b, top1_acc, top1_ir, v_acc,
    valid_list, MetricOptions, MetricsReport, Timing,
};
pub use report::{LambdaRow, LambdaSweep, VariantRow, VariantTable};

/// A named model or training variant.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Variant {
    Full,
    Concat,
    NoGate,
    MseOnly,
    NoPretrain,
    Only(Modality),
    PlanKpiConcat,
    Main(Modality),
}

impl Variant {
    pub fn all() -> Vec<Variant> {
        let mut v = vec![
            Variant::Full,
            Variant::Concat,
            Variant::NoGate,
            Variant::MseOnly,
            Variant::NoPretrain,
        ];
        v.extend(Modality::ALL.map(Variant::Only));
        v.push(Variant::PlanKpiConcat);
        v.extend([Modality::Plan, Modality::Log, Modality::Kpi].map(Variant::Main));
        v
    }

    pub fn name(self) -> String {
        match self {
            Variant::Full => "full".into(),
            Variant::Concat => "concat".into(),
            Variant::NoGate => "no-gate".into(),
            Variant::MseOnly => "mse-only".into(),
            Variant::NoPretrain => "no-pretrain".into(),
            Variant::Only(m) => format!("only-{m}"),
            Variant::PlanKpiConcat => "plan-kpi-concat".into(),
            Variant::Main(m) => format!("main-{m}"),
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        let s = s.trim();
        if let Some(m) = s.strip_prefix("only-") {
            return Ok(Variant::Only(Modality::parse(m)?));
        }
        if let Some(m) = s.strip_prefix("main-") {
            return Ok(Variant::Main(Modality::parse(m)?));
        }
        Ok(match s {
            "full" => Variant::Full,
            "concat" => Variant::Concat,
            "no-gate" => Variant::NoGate,
            "mse-only" => Variant::MseOnly,
            "no-pretrain" => Variant::NoPretrain,
            "plan-kpi-concat" => Variant::PlanKpiConcat,
            other => return Err(Error::InvalidConfig(format!("unknown variant `{other}`"))),
        })
    }

    /// Comma-separated list, or `all`.
    pub fn parse_list(s: &str) -> Result<Vec<Self>> {
        if s.trim() == "all" {
            return Ok(Variant::all());
        }
        s.split(',')
            .filter(|p| !p.trim().is_empty())
            .map(Variant::parse)
            .collect()
    }

    /// Training configuration of this variant, derived from `base`.
    pub fn configure(self, base: &TrainConfig) -> TrainConfig {
        let mut cfg = base.clone();
        match self {
            Variant::Full | Variant::NoPretrain => {}
            Variant::Concat => cfg.model.architecture = Architecture::Concat,
            Variant::NoGate => cfg.model.architecture = Architecture::NoGate,
            Variant::MseOnly => cfg.lambda = 0.0,
            Variant::Only(m) => cfg.model.architecture = Architecture::Only(m),
            Variant::PlanKpiConcat => cfg.model.architecture = Architecture::PlanKpiConcat,
            Variant::Main(m) => cfg.model.fusion.configure_main_modality(m),
        }
        cfg
    }

    pub fn uses_pretraining(self) -> bool {
        self != Variant::NoPretrain
    }
}

/// Pretraining settings matched to a training configuration.
pub fn pretrain_config_for(train: &TrainConfig, epochs: usize, seed: u64) -> PretrainConfig {
    let model = train.model_config();
    PretrainConfig {
        encoder: model.encoder,
        epochs,
        seed,
        ..PretrainConfig::default()
    }
}

/// Pretrain encoders on the unlabeled and training records of `ds`.
pub fn pretrain_encoders(ds: &Dataset, cfg: &PretrainConfig) -> Result<Checkpoint> {
    let out = run_pretraining(&ds.pretrain_pool(), cfg)?;
    Ok(out.checkpoint(cfg))
}

/// Train one variant on the train split of `ds`, selecting on val.
pub fn run_variant(
    ds: &Dataset,
    variant: Variant,
    base: &TrainConfig,
    pretrained: Option<&Checkpoint>,
) -> Result<TrainOutcome> {
    let cfg = variant.configure(base);
    let ckpt = if variant.uses_pretraining() {
        pretrained
    } else {
        None
    };
    train(&ds.subset(Split::Train), &ds.subset(Split::Val), ckpt, &cfg)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HarnessConfig {
    pub train: TrainConfig,
    /// Pretraining epochs per seed; zero disables pretraining for every variant.
    pub pretrain_epochs: usize,
}

/// Train and test every variant under every seed. Pretraining runs once per
/// seed and is shared by the variants that use it.
pub fn run_variants(
    ds: &Dataset,
    variants: &[Variant],
    seeds: &[u64],
    cfg: &HarnessConfig,
) -> Result<VariantTable> {
    if variants.is_empty() || seeds.is_empty() {
        return Err(Error::InvalidConfig(
            "need at least one variant and one seed".into(),
        ));
    }
    let test = ds.subset(Split::Test);
    let opts = MetricOptions {
        epsilon: cfg.train.epsilon,
        ..MetricOptions::default()
    };
    let mut runs: Vec<Vec<MetricsReport>> = vec![Vec::with_capacity(seeds.len()); variants.len()];
    for &seed in seeds {
        let base = TrainConfig {
            seed,
            ..cfg.train.clone()
        };
        let needs = cfg.pretrain_epochs > 0 && variants.iter().any(|v| v.uses_pretraining());
        let ckpt = if needs {
            Some(pretrain_encoders(
                ds,
                &pretrain_config_for(&base, cfg.pretrain_epochs, seed),
            )?)
        } else {
            None
        };
        for (k, &v) in variants.iter().enumerate() {
            let out = run_variant(ds, v, &base, ckpt.as_ref())?;
            let mut report = evaluate_model(&out.model, &test, &opts)?;
            report.timing = None;
            info!(
                "seed {seed} {}: top1 {:.4} tau {:.4}",
                v.name(),
                report.top1_acc,
                report.tau
            );
            runs[k].push(report);
        }
    }
    Ok(VariantTable::new(
        variants
            .iter()
            .zip(runs)
            .map(|(v, r)| (v.name(), r))
            .collect(),
        seeds.to_vec(),
    ))
}

/// One training per lambda, all from the same seed and pretrained encoders.
pub fn lambda_sweep(
    ds: &Dataset,
    values: &[f64],
    base: &TrainConfig,
    pretrained: Option<&Checkpoint>,
) -> Result<LambdaSweep> {
    let test = ds.subset(Split::Test);
    let opts = MetricOptions {
        epsilon: base.epsilon,
        ..MetricOptions::default()
    };
    let mut rows = Vec::with_capacity(values.len());
    for &lambda in values {
        let cfg = TrainConfig {
            lambda,
            ..base.clone()
        };
        let out = train(
            &ds.subset(Split::Train),
            &ds.subset(Split::Val),
            pretrained,
            &cfg,
        )?;
        let report = evaluate_model(&out.model, &test, &opts)?;
        info!("lambda {lambda}: top1 {:.4}", report.top1_acc);
        rows.push(LambdaRow { lambda, report });
    }
    Ok(LambdaSweep {
        seed: base.seed,
        rows,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EndToEnd {
    pub n_queries: usize,
    pub original_s: f64,
    pub revised_s: f64,
    /// `100 * (original - revised) / original`.
    pub improvement_pct: f64,
}

/// Revise every record by the cause ranked first in `estimates` and
/// re-simulate it without noise.
pub fn end_to_end_improvement(
    records: &[QueryRecord],
    estimates: &[Vec<f64>],
    sim: &Simulator,
) -> Result<EndToEnd> {
    if records.len() != estimates.len() {
        return Err(Error::shape(
            "end_to_end",
            &[records.len()],
            &[estimates.len()],
        ));
    }
    let mut original = 0.0;
    let mut revised = 0.0;
    for (r, e) in records.iter().zip(estimates) {
        let spec = r
            .spec
            .as_ref()
            .ok_or_else(|| Error::Unsupported(format!("record {} has no simulator spec", r.id)))?;
        original += simulate_runtime(spec, sim, None)?;
        revised += simulate_runtime(&revise(spec, argmax(e)), sim, None)?;
    }
    Ok(EndToEnd {
        n_queries: records.len(),
        original_s: original,
        revised_s: revised,
        improvement_pct: if original > 0.0 {
            100.0 * (original - revised) / original
        } else {
            0.0
        },
    })
}

/// True impacts as estimates: the labels when present, otherwise recomputed
/// from the spec.
pub fn oracle_estimates(records: &[QueryRecord], sim: Option<&Simulator>) -> Result<Vec<Vec<f64>>> {
    records
        .iter()
        .map(|r| match (&r.impacts, &r.spec, sim) {
            (Some(y), _, _) => Ok(y.clone()),
            (None, Some(spec), Some(sim)) => impact_vector(spec, sim),
            _ => Err(Error::Unsupported(format!(
                "record {} has neither labels nor a spec",
                r.id
            ))),
        })
        .collect()
}

#[cfg(test)]
mod tests;
