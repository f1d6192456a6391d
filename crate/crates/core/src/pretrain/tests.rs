use super::*;
use crate::domain::plan::{OperatorKind, PlanNode, PlanTree};
use crate::domain::PlanDag;
use crate::synthgen::{generate_workload, GenConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn small_encoder() -> EncoderConfig {
    EncoderConfig {
        d: 8,
        sql_layers: 1,
        sql_heads: 2,
        plan_layers: 1,
        plan_heads: 2,
        log_hidden: vec![8],
        kpi_channels: [2, 2],
        ..EncoderConfig::default()
    }
}

fn small_cfg(seed: u64) -> PretrainConfig {
    PretrainConfig {
        encoder: small_encoder(),
        epochs: 3,
        batch: 8,
        lr: 3e-3,
        seed,
        aggregator_heads: 2,
        ..PretrainConfig::default()
    }
}

fn workload(total: usize, seed: u64) -> Dataset {
    let cfg = GenConfig {
        total,
        labeled: total / 4,
        ..GenConfig::default()
    };
    generate_workload(&cfg, seed).unwrap().pretrain_pool()
}

fn bare_input(n_tokens: usize) -> PreparedInput {
    let plan = PlanDag::from_tree(&PlanTree::leaf(PlanNode::new(
        OperatorKind::Scan,
        10.0,
        1.0,
    )))
    .unwrap();
    let vocab = Vocab::standard();
    PreparedInput {
        sql_ids: (0..n_tokens).map(|i| 10 + i).collect(),
        plan: crate::encoders::PreparedPlan::from_dag(&plan, &vocab),
        log: [0.5; crate::domain::log::LOG_DIM],
        kpi: vec![0.0; 360],
    }
}

#[test]
fn table_annotation_pairs_with_its_tokens() {
    let ds = workload(40, 1);
    let r = ds
        .records
        .iter()
        .find(|r| r.plan.nodes().iter().any(|n| n.table.is_some()))
        .unwrap();
    let pairs = match_critical_spans(r);
    let texts = r.sql.texts();
    let table_pair = pairs.iter().find(|p| p.kind == PairKind::Table).unwrap();
    let (Span::Sql { start, len }, Span::PlanNode(node)) = (table_pair.a, table_pair.b) else {
        panic!("unexpected spans {table_pair:?}");
    };
    let table = r.plan.nodes()[node].table.as_ref().unwrap();
    assert_eq!(
        texts[start..start + len].to_vec(),
        Vocab::identifier_pieces(table)
    );
}

#[test]
fn every_generated_scan_table_is_matched() {
    let ds = workload(100, 2);
    for r in &ds.records {
        let pairs = match_critical_spans(r);
        let tables = r.plan.nodes().iter().filter(|n| n.table.is_some()).count();
        let matched = pairs.iter().filter(|p| p.kind == PairKind::Table).count();
        assert!(
            matched >= 1 && matched <= tables,
            "{}: {matched} of {tables}",
            r.sql_text
        );
    }
}

#[test]
fn operation_pairs_point_at_matching_keywords() {
    let ds = workload(60, 3);
    let mut seen = 0;
    for r in &ds.records {
        let texts = r.sql.texts();
        for p in match_critical_spans(r)
            .into_iter()
            .filter(|p| p.kind == PairKind::Operation)
        {
            let (Span::Sql { start, .. }, Span::PlanNode(node)) = (p.a, p.b) else {
                panic!()
            };
            assert_eq!(
                spans::operation_keyword(r.plan.nodes()[node].kind),
                Some(texts[start])
            );
            seen += 1;
        }
    }
    assert!(seen > 0);
}

#[test]
fn fallback_masks_a_fraction_of_sql_tokens() {
    let x = bare_input(20);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let s = mask_for_pretraining(&x, &[], 0.15, MaskMode::SingleModality, &mut rng);
    assert_eq!(s.targets.len(), 3);
    assert!(s.targets.iter().all(|t| t.modality == Modality::Sql));
    let masked: Vec<_> = s.targets.iter().map(|t| t.position).collect();
    for (i, (&a, &b)) in x.sql_ids.iter().zip(&s.input.sql_ids).enumerate() {
        if masked.contains(&i) {
            assert_eq!(b, crate::domain::sql::MASK);
        } else {
            assert_eq!(a, b);
        }
    }
    assert_eq!(s.input.plan, x.plan);
    assert_eq!(s.input.log, x.log);
}

#[test]
fn masking_is_deterministic_per_seed() {
    let ds = workload(30, 5);
    let data = prepare_pool(&ds, &EncoderConfig::default()).unwrap();
    for (x, pairs) in &data {
        let a = mask_for_pretraining(
            x,
            pairs,
            0.15,
            MaskMode::SingleModality,
            &mut ChaCha8Rng::seed_from_u64(9),
        );
        let b = mask_for_pretraining(
            x,
            pairs,
            0.15,
            MaskMode::SingleModality,
            &mut ChaCha8Rng::seed_from_u64(9),
        );
        assert_eq!(a, b);
    }
}

#[test]
fn single_modality_mode_masks_one_side_and_the_coin_is_fair() {
    let pairs: Vec<_> = (0..10)
        .map(|i| AlignmentPair {
            kind: PairKind::Column,
            a: Span::Sql { start: i, len: 1 },
            b: Span::PlanNode(0),
        })
        .collect();
    let x = bare_input(12);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut sql = 0;
    let flips = 10_000;
    for _ in 0..flips {
        let s = mask_for_pretraining(&x, &pairs, 0.3, MaskMode::SingleModality, &mut rng);
        assert_eq!(s.sides.len(), 3);
        assert!(s.sides.iter().all(|m| *m == s.sides[0]));
        if s.sides[0] == Modality::Sql {
            sql += 1;
        }
    }
    let f = sql as f64 / flips as f64;
    assert!((0.48..=0.52).contains(&f), "{f}");
}

#[test]
fn numeric_pairs_mask_the_log_slot() {
    let x = bare_input(5);
    let pair = AlignmentPair {
        kind: PairKind::Numeric,
        a: Span::LogField(2),
        b: Span::PlanNode(0),
    };
    let s = mask_for_pretraining(
        &x,
        &[pair],
        0.15,
        MaskMode::PerPair,
        &mut ChaCha8Rng::seed_from_u64(0),
    );
    assert_eq!(s.input.log[2], LOG_SENTINEL);
    assert_eq!(s.input.log[3], x.log[3]);
    assert_eq!(
        s.targets,
        vec![MaskTarget {
            modality: Modality::Log,
            position: 0
        }]
    );
    assert_eq!(s.input.sql_ids, x.sql_ids);
}

#[test]
fn plan_side_masks_kind_or_identifier() {
    let x = bare_input(5);
    let mut op = AlignmentPair {
        kind: PairKind::Operation,
        a: Span::Sql { start: 0, len: 1 },
        b: Span::PlanNode(0),
    };
    for seed in 0..20 {
        let s = mask_for_pretraining(
            &x,
            &[op],
            1.0,
            MaskMode::SingleModality,
            &mut ChaCha8Rng::seed_from_u64(seed),
        );
        if s.sides[0] == Modality::Plan {
            assert_eq!(s.input.plan.kinds[0], crate::encoders::MASK_KIND);
            assert_eq!(s.input.sql_ids, x.sql_ids);
        }
    }
    op.kind = PairKind::Table;
    for seed in 0..20 {
        let s = mask_for_pretraining(
            &x,
            &[op],
            1.0,
            MaskMode::SingleModality,
            &mut ChaCha8Rng::seed_from_u64(seed),
        );
        if s.sides[0] == Modality::Plan {
            assert_eq!(s.input.plan.idents[0], vec![crate::domain::sql::MASK]);
            assert_eq!(s.input.plan.kinds, x.plan.kinds);
        }
    }
}

#[test]
fn aggregator_predicts_nothing_without_targets() {
    let cfg = small_cfg(0);
    let model = PretrainModel::new(&cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let mut g = Graph::new(&model.store);
    let x = bare_input(6);
    let parts = [
        model.encoders.encode_sql(&mut g, &x).unwrap().positions,
        model.encoders.encode_plan(&mut g, &x).unwrap().positions,
        model.encoders.encode_log(&mut g, &x).unwrap().positions,
    ];
    assert!(model
        .aggregator
        .predict(&mut g, parts, &[])
        .unwrap()
        .is_none());
}

#[test]
fn single_target_loss_is_the_squared_distance() {
    let mut cfg = small_cfg(1);
    cfg.encoder.kpi_q = 2;
    cfg.encoder.kpi_t = 4;
    let model = PretrainModel::new(&cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let mut clean = bare_input(6);
    clean.kpi = vec![0.25; 8];
    let mut masked = clean.clone();
    masked.sql_ids[2] = crate::domain::sql::MASK;
    let sample = MaskedSample {
        input: masked.clone(),
        targets: vec![MaskTarget {
            modality: Modality::Sql,
            position: 2,
        }],
        sides: vec![Modality::Sql],
    };

    let mut g = Graph::new(&model.store);
    let (loss, parts) = model.sample_loss(&mut g, &sample, &clean).unwrap();

    // Independent evaluation of the same quantities.
    let mut h = Graph::new(&model.store);
    let e = &model.encoders;
    let parts_in = [
        e.encode_sql(&mut h, &masked).unwrap().positions,
        e.encode_plan(&mut h, &masked).unwrap().positions,
        e.encode_log(&mut h, &masked).unwrap().positions,
    ];
    let pred = model
        .aggregator
        .predict(&mut h, parts_in, &sample.targets)
        .unwrap()
        .unwrap();
    let pred = h.value(pred).data().to_vec();
    let mut c = Graph::new(&model.store);
    let es = e.encode_sql(&mut c, &clean).unwrap();
    let target = c.value(es.positions).row_slice(2).to_vec();
    let want_sql: f64 = pred.iter().zip(&target).map(|(a, b)| (a - b).powi(2)).sum();
    let ei = e.encode_kpi(&mut c, &masked).unwrap();
    let dec = e.decode_kpi(&mut c, ei.pooled).unwrap();
    let want_kpi = c
        .value(dec)
        .data()
        .iter()
        .map(|v| (v - 0.25).powi(2))
        .sum::<f64>()
        / 8.0;

    assert!((parts.sql.unwrap() - want_sql).abs() < 1e-12);
    assert!((parts.kpi - want_kpi).abs() < 1e-12);
    assert_eq!(parts.plan, None);
    assert_eq!(parts.log, None);
    assert!((g.value(loss).item() - want_sql - want_kpi).abs() < 1e-12);
    assert!(want_sql > 0.0);
}

#[test]
fn gradients_reach_every_encoder() {
    let cfg = small_cfg(2);
    let ds = workload(20, 2);
    let data = prepare_pool(&ds, &cfg.encoder).unwrap();
    let model = PretrainModel::new(&cfg, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
    let (clean, pairs) = &data[0];
    let sample = mask_for_pretraining(
        clean,
        pairs,
        0.15,
        cfg.mask_mode,
        &mut ChaCha8Rng::seed_from_u64(3),
    );
    let mut g = Graph::new(&model.store);
    let (loss, parts) = model.sample_loss(&mut g, &sample, clean).unwrap();
    assert!(parts.total() > 0.0);
    let grads = g.backward(loss).unwrap();
    for prefix in ["enc_s/", "enc_p/", "enc_l/", "enc_i/", "dec_i/", "agg/"] {
        assert!(
            grads.max_abs_with_prefix(&model.store, prefix) > 0.0,
            "{prefix}"
        );
    }
}

#[test]
fn pretraining_lowers_the_loss_and_is_reproducible() {
    let ds = workload(48, 7);
    let cfg = small_cfg(7);
    let a = run_pretraining(&ds, &cfg).unwrap();
    let first = a.history.first().unwrap().total;
    let last = a.history.last().unwrap().total;
    assert!(last < first, "{first} -> {last}");
    assert_eq!(a.history.len(), 3);
    let csv = a.history_csv();
    assert!(csv.starts_with("epoch,l_sql,l_plan,l_log,l_kpi,total\n"));
    assert_eq!(csv.lines().count(), 4);

    let b = run_pretraining(&ds, &cfg).unwrap();
    for (p, q) in a.model.store.iter().zip(b.model.store.iter()) {
        assert_eq!(p.value.data(), q.value.data(), "{}", p.name);
    }
}

#[test]
fn empty_pool_and_kpi_mismatch_are_rejected() {
    let ds = workload(12, 8);
    let empty = Dataset {
        records: vec![],
        ..ds.clone()
    };
    assert_eq!(
        run_pretraining(&empty, &small_cfg(0))
            .unwrap_err()
            .category(),
        "insufficient_data"
    );
    let mut cfg = small_cfg(0);
    cfg.encoder.kpi_t = 30;
    assert_eq!(
        run_pretraining(&ds, &cfg).unwrap_err().category(),
        "shape_error"
    );
}
