use super::*;
use crate::diffcore::{grad_check_sampled, jitter_biases, Tensor};
use crate::domain::Split;
use crate::encoders::EncoderConfig;
use crate::fusion::FusionConfig;
use crate::synthgen::{generate_workload, GenConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() < 1e-9
}

fn small_model_config() -> ModelConfig {
    ModelConfig {
        encoder: EncoderConfig {
            d: 8,
            sql_layers: 1,
            sql_heads: 2,
            plan_layers: 1,
            plan_heads: 2,
            log_hidden: vec![8],
            kpi_channels: [2, 2],
            ..EncoderConfig::default()
        },
        fusion: FusionConfig {
            d: 8,
            blocks: 1,
            ..FusionConfig::default()
        },
        ..ModelConfig::default()
    }
}

fn small_train_config(seed: u64, epochs: usize) -> TrainConfig {
    TrainConfig {
        batch: 8,
        epochs,
        lr: 3e-3,
        seed,
        model: small_model_config(),
        ..TrainConfig::default()
    }
}

fn workload(seed: u64) -> Dataset {
    let cfg = GenConfig {
        total: 160,
        labeled: 60,
        ..GenConfig::default()
    };
    generate_workload(&cfg, seed).unwrap()
}

fn fresh_model(cfg: &ModelConfig, ds: &Dataset, seed: u64) -> RCRankModel {
    RCRankModel::new(
        cfg,
        ds.catalog.clone(),
        ds.log_norm.clone(),
        ds.kpi_norm.clone(),
        &mut ChaCha8Rng::seed_from_u64(seed),
    )
    .unwrap()
}

#[test]
fn prediction_loss_examples() {
    assert_eq!(loss_pred(&[0.2, 0.4], &[0.2, 0.4]).unwrap(), 0.0);
    assert!(close(loss_pred(&[0.5], &[0.3]).unwrap(), 0.04));
    assert!(close(
        loss_pred(&[0.5, -0.1], &[0.3, 0.2]).unwrap(),
        0.04 + 0.09
    ));
    assert_eq!(
        loss_pred(&[0.5], &[0.3, 0.1]).unwrap_err().category(),
        "shape_error"
    );
}

#[test]
fn validity_hinge_examples() {
    assert!(close(
        loss_valid(&[0.05], &[0.12], 0.1, 0.02).unwrap(),
        0.04
    ));
    assert!(close(
        loss_valid(&[0.30], &[0.05], 0.1, 0.02).unwrap(),
        0.07
    ));
    // A valid cause estimated at exactly epsilon + eta sits on the hinge.
    assert_eq!(loss_valid(&[0.25], &[0.125], 0.125, 0.0).unwrap(), 0.0);
    assert!(loss_valid(&[0.30], &[0.12], 0.1, 0.02).unwrap().abs() < 1e-15);
    assert_eq!(indicator(0.1, 0.1), -1.0);
    assert_eq!(indicator(0.0999, 0.1), 1.0);
}

#[test]
fn order_hinge_worked_gaps() {
    // True adjacent gap 9.6 points, estimated 6.5: the shortfall is charged.
    let y = [0.50, 0.404];
    assert!(close(
        loss_order(&y, &[0.40, 0.335], OrderMode::TruthPermuted).unwrap(),
        0.031
    ));
    // Estimated gap 10.1 points exceeds the true one: nothing to adjust.
    assert_eq!(
        loss_order(&y, &[0.40, 0.299], OrderMode::TruthPermuted).unwrap(),
        0.0
    );
    assert_eq!(loss_order(&y, &y, OrderMode::TruthPermuted).unwrap(), 0.0);
}

#[test]
fn order_hinge_penalises_inversions_only_when_permuted_by_truth() {
    let y = [0.5, 0.2];
    let inverted = [0.2, 0.5];
    assert!(close(
        loss_order(&y, &inverted, OrderMode::TruthPermuted).unwrap(),
        0.6
    ));
    assert_eq!(
        loss_order(&y, &inverted, OrderMode::IndependentSort).unwrap(),
        0.0
    );
}

#[test]
fn order_hinge_is_shift_invariant() {
    let y = [0.3, 0.7, -0.1, 0.45];
    let yh = [0.2, 0.5, 0.1, 0.6];
    let base = loss_order(&y, &yh, OrderMode::TruthPermuted).unwrap();
    for c in [-0.4, 0.25, 3.0] {
        let ys: Vec<f64> = y.iter().map(|v| v + c).collect();
        let yhs: Vec<f64> = yh.iter().map(|v| v + c).collect();
        assert!((loss_order(&ys, &yhs, OrderMode::TruthPermuted).unwrap() - base).abs() < 1e-12);
    }
}

#[test]
fn total_loss_combines_components() {
    // Components 0.04, 0.01 and 0.031.
    let y = [0.206, 0.11, 0.0];
    let yhat = [0.175, 0.11, -(0.039039f64).sqrt()];
    let parts = total_loss(&y, &yhat, &LossWeights::default()).unwrap();
    assert!(close(parts.pred, 0.04), "{parts:?}");
    assert!(close(parts.valid, 0.01), "{parts:?}");
    assert!(close(parts.order, 0.031), "{parts:?}");
    assert!(close(parts.total, 0.327), "{parts:?}");

    let w0 = LossWeights {
        lambda: 0.0,
        ..LossWeights::default()
    };
    assert_eq!(
        total_loss(&y, &yhat, &w0).unwrap().total,
        loss_pred(&y, &yhat).unwrap()
    );

    let perfect = [0.5, 0.3, 0.0];
    assert_eq!(
        total_loss(&perfect, &perfect, &LossWeights::default())
            .unwrap()
            .total,
        0.0
    );
}

#[test]
fn graph_loss_matches_plain_losses() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    use rand::Rng;
    for mode in [OrderMode::TruthPermuted, OrderMode::IndependentSort] {
        for _ in 0..50 {
            let r = rng.gen_range(1..7);
            let y: Vec<f64> = (0..r).map(|_| rng.gen_range(-0.3..0.9)).collect();
            let yhat: Vec<f64> = (0..r).map(|_| rng.gen_range(-0.3..0.9)).collect();
            let w = LossWeights {
                order: mode,
                ..LossWeights::default()
            };
            let store = crate::diffcore::ParamStore::new();
            let mut g = Graph::new(&store);
            let v = g.constant(Tensor::row(&yhat)).unwrap();
            let (loss, parts) = graph_loss(&mut g, v, &y, &w).unwrap();
            let want = total_loss(&y, &yhat, &w).unwrap();
            assert!((parts.total - want.total).abs() < 1e-12);
            assert!((parts.valid - want.valid).abs() < 1e-12);
            assert!((parts.order - want.order).abs() < 1e-12);
            assert_eq!(g.value(loss).item(), parts.total);
        }
    }
}

#[test]
fn full_loss_passes_grad_check() {
    let ds = workload(3);
    let cfg = small_model_config();
    let mut model = fresh_model(&cfg, &ds, 11);
    jitter_biases(&mut model.store, 0.2, 11);
    let recs: Vec<_> = ds.labeled().take(2).collect();
    let xs: Vec<_> = recs.iter().map(|r| model.prepare(r).unwrap()).collect();
    let ys: Vec<_> = recs.iter().map(|r| r.impacts.clone().unwrap()).collect();
    let w = LossWeights::default();
    let err = grad_check_sampled(
        &model.store,
        |g| {
            let mut total = None;
            for (x, y) in xs.iter().zip(&ys) {
                let yhat = model.forward(g, x)?;
                let (l, _) = graph_loss(g, yhat, y, &w)?;
                total = Some(match total {
                    None => l,
                    Some(t) => g.add(t, l)?,
                });
            }
            g.scale(total.unwrap(), 0.5)
        },
        1e-3,
        16,
        3,
    )
    .unwrap();
    assert!(err < 1e-4, "{err}");
}

#[test]
fn zero_head_weights_give_bias_output() {
    let ds = workload(5);
    let mut model = fresh_model(&small_model_config(), &ds, 1);
    let w = model
        .store
        .by_name("head/1/w")
        .unwrap()
        .value
        .shape()
        .to_vec();
    model
        .store
        .set_value("head/1/w", Tensor::zeros(&w))
        .unwrap();
    model
        .store
        .set_value("head/1/b", Tensor::row(&[0.37]))
        .unwrap();
    let est = model.estimate_record(ds.labeled().next().unwrap()).unwrap();
    assert_eq!(est, vec![0.37; model.r()]);
}

#[test]
fn distinct_fused_rows_give_distinct_estimates() {
    let ds = workload(5);
    let model = fresh_model(&small_model_config(), &ds, 2);
    let est = model.estimate_record(ds.labeled().next().unwrap()).unwrap();
    assert_eq!(est.len(), ds.r());
    for i in 0..est.len() {
        for j in i + 1..est.len() {
            assert_ne!(est[i], est[j]);
        }
    }
}

#[test]
fn diagnosis_filters_and_ranks() {
    let catalog: Vec<String> = ["rc0", "rc1", "rc2"].map(String::from).to_vec();
    let d = RankedDiagnosis::from_estimates(vec![0.55, 0.08, 0.20], &catalog, 0.1);
    let got: Vec<(&str, f64)> = d
        .causes
        .iter()
        .map(|c| (c.name.as_str(), c.impact))
        .collect();
    assert_eq!(got, vec![("rc0", 0.55), ("rc2", 0.20)]);
    assert_eq!(d.estimates, vec![0.55, 0.08, 0.20]);

    let tie = RankedDiagnosis::from_estimates(vec![0.2, 0.2], &catalog[..2], 0.1);
    assert_eq!(tie.causes[0].index, 0);
    assert_eq!(tie.causes[1].index, 1);

    let none = RankedDiagnosis::from_estimates(vec![0.05, -0.3, 0.0999], &catalog, 0.1);
    assert!(none.causes.is_empty());
    assert!(none.table().contains("no root cause"));
}

#[test]
fn diagnose_rejects_mismatched_kpi_shape() {
    let ds = workload(6);
    let mut cfg = small_model_config();
    cfg.encoder.kpi_t += 2;
    let model = fresh_model(&cfg, &ds, 1);
    let err = diagnose(&model, ds.labeled().next().unwrap(), 0.1).unwrap_err();
    assert_eq!(err.category(), "shape_error");
}

#[test]
fn training_reduces_loss_and_is_reproducible() {
    let ds = workload(7);
    let cfg = small_train_config(7, 6);
    let train_set = ds.subset(Split::Train);
    let val = ds.subset(Split::Val);
    let a = train(&train_set, &val, None, &cfg).unwrap();
    let first = a.history.first().unwrap().loss.total;
    let last = a.history.last().unwrap().loss.total;
    assert!(last < first, "{first} -> {last}");
    assert!(a.best_epoch < cfg.epochs);

    let b = train(&train_set, &val, None, &cfg).unwrap();
    let opts = MetricOptions::default();
    let test = ds.subset(Split::Test);
    let ra = evaluate_model(&a.model, &test, &opts).unwrap();
    let rb = evaluate_model(&b.model, &test, &opts).unwrap();
    assert_eq!(
        serde_json::to_string(&ra).unwrap(),
        serde_json::to_string(&rb).unwrap()
    );
    assert_eq!(a.checkpoint(&cfg).to_bytes(), b.checkpoint(&cfg).to_bytes());

    let csv = a.history_csv();
    assert!(csv.starts_with("epoch,l_pred,l_valid,l_order,total,val_v_acc"));
    assert_eq!(csv.lines().count(), cfg.epochs + 1);
}

#[test]
fn checkpoint_rebuilds_identical_model() {
    let ds = workload(8);
    let cfg = small_train_config(8, 1);
    let out = train(&ds.subset(Split::Train), &ds.subset(Split::Val), None, &cfg).unwrap();
    let ckpt = out.checkpoint(&cfg);
    let bytes = ckpt.to_bytes();
    let back = Checkpoint::from_bytes(&bytes).unwrap();
    let model = RCRankModel::from_checkpoint(&back).unwrap();
    for r in ds.labeled().take(5) {
        assert_eq!(
            model.estimate_record(r).unwrap(),
            out.model.estimate_record(r).unwrap()
        );
    }

    let pre = Checkpoint::from_store(
        &crate::diffcore::ParamStore::new(),
        serde_json::json!({"kind": "pretrain"}),
    );
    assert_eq!(
        RCRankModel::from_checkpoint(&pre).unwrap_err().category(),
        "checkpoint_error"
    );
}

#[test]
fn pretrained_encoders_are_loaded() {
    let ds = workload(9);
    let cfg = small_train_config(9, 1);
    let pcfg = crate::evalkit::pretrain_config_for(&cfg, 1, 9);
    let pcfg = crate::pretrain::PretrainConfig {
        batch: 8,
        aggregator_heads: 2,
        ..pcfg
    };
    let ckpt = crate::evalkit::pretrain_encoders(&ds, &pcfg).unwrap();
    let mut model = fresh_model(&cfg.model_config(), &ds, 0);
    let n = model.load_pretrained(&ckpt).unwrap();
    assert!(n > 0);
    let (name, t) = ckpt
        .tensors
        .iter()
        .find(|t| t.0.starts_with("enc_s/"))
        .unwrap();
    assert_eq!(model.store.by_name(name).unwrap().value.data(), t.data());
}

#[test]
fn empty_training_set_is_insufficient() {
    let ds = workload(10);
    let mut empty = ds.subset(Split::Train);
    empty.records.retain(|r| r.impacts.is_none());
    let err = train(
        &empty,
        &ds.subset(Split::Val),
        None,
        &small_train_config(1, 1),
    )
    .unwrap_err();
    assert_eq!(err.category(), "insufficient_data");
}

#[test]
fn invalid_hyperparameters_are_rejected() {
    let ds = workload(10);
    for cfg in [
        TrainConfig {
            lambda: -1.0,
            ..small_train_config(1, 1)
        },
        TrainConfig {
            epsilon: 1.0,
            ..small_train_config(1, 1)
        },
        TrainConfig {
            eta: -0.1,
            ..small_train_config(1, 1)
        },
    ] {
        let err = train(&ds.subset(Split::Train), &ds.subset(Split::Val), None, &cfg).unwrap_err();
        assert_eq!(err.category(), "invalid_config");
    }
}
