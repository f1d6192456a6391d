use super::*;
use crate::synthgen::{generate_workload, GenConfig};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rows(v: &[&[f64]]) -> Vec<Vec<f64>> {
    v.iter().map(|r| r.to_vec()).collect()
}

fn random_matrix(rng: &mut ChaCha8Rng, n: usize, r: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| (0..r).map(|_| rng.gen_range(-0.2..0.9)).collect())
        .collect()
}

#[test]
fn v_acc_examples() {
    let t = rows(&[&[0.3, 0.0, 0.5]]);
    assert_eq!(v_acc(&t, &t, 0.1).unwrap(), 1.0);
    let t = rows(&[&[0.3, 0.4]]);
    let e = rows(&[&[0.3, 0.05]]);
    assert_eq!(v_acc(&t, &e, 0.1).unwrap(), 0.5);
    assert_eq!(
        v_acc(&t, &rows(&[&[0.3]]), 0.1).unwrap_err().category(),
        "shape_error"
    );
}

#[test]
fn top1_examples_and_exclusions() {
    let t = rows(&[&[0.5, 0.1]]);
    assert_eq!(top1_acc(&t, &t, 0.1).unwrap(), 1.0);
    assert_eq!(top1_acc(&t, &rows(&[&[0.1, 0.5]]), 0.1).unwrap(), 0.0);

    // A tied truth and a query with nothing valid are left out.
    let t = rows(&[&[0.5, 0.1], &[0.3, 0.3], &[0.0, 0.05]]);
    let e = rows(&[&[0.6, 0.2], &[0.1, 0.9], &[0.9, 0.0]]);
    assert_eq!(top1_acc(&t, &e, 0.1).unwrap(), 1.0);
    let r = MetricsReport::compute(&t, &e, &MetricOptions::default()).unwrap();
    assert_eq!((r.n_tied_top1, r.n_no_valid, r.n_queries), (1, 1, 3));
}

#[test]
fn argmax_prefers_lower_index() {
    assert_eq!(argmax(&[0.2, 0.7, 0.7]), 1);
    assert!(has_tied_max(&[0.2, 0.7, 0.7]));
    assert!(!has_tied_max(&[0.7, 0.2, 0.2]));
    assert_eq!(valid_list(&[0.2, 0.05, 0.2, 0.4], 0.1), vec![3, 0, 2]);
}

#[test]
fn mse_examples() {
    let t = rows(&[&[0.2, 0.4], &[0.1, 0.0]]);
    assert_eq!(mse_with_std(&t, &t, false).unwrap(), (0.0, 0.0));
    let (m, s) = mse_with_std(&rows(&[&[0.5]]), &rows(&[&[0.3]]), false).unwrap();
    assert!((m - 0.04).abs() < 1e-12 && s == 0.0);

    // Per query: errors 0.02 and 0.0 give mean 0.01, std 0.01.
    let e = rows(&[&[0.0, 0.4], &[0.1, 0.0]]);
    let (m, s) = mse_with_std(&t, &e, false).unwrap();
    assert!((m - 0.01).abs() < 1e-12 && (s - 0.01).abs() < 1e-12);
    // Per cell: squared errors [0.04, 0, 0, 0].
    let (m, s) = mse_with_std(&t, &e, true).unwrap();
    assert!((m - 0.01).abs() < 1e-12 && (s - 0.0003f64.sqrt()).abs() < 1e-12);
}

#[test]
fn mc_acc_needs_membership_and_order() {
    let t = rows(&[&[0.5, 0.3, 0.0]]);
    assert_eq!(mc_acc(&t, &t, 0.1).unwrap(), 1.0);
    assert_eq!(mc_acc(&t, &rows(&[&[0.3, 0.5, 0.0]]), 0.1).unwrap(), 0.0);
    assert_eq!(mc_acc(&t, &rows(&[&[0.5, 0.3, 0.2]]), 0.1).unwrap(), 0.0);
    // Nothing valid in truth: excluded.
    let t = rows(&[&[0.5, 0.3, 0.0], &[0.0, 0.0, 0.0]]);
    let e = rows(&[&[0.4, 0.2, 0.0], &[0.5, 0.0, 0.0]]);
    assert_eq!(mc_acc(&t, &e, 0.1).unwrap(), 1.0);
}

#[test]
fn tau_examples() {
    let t = [0.5, 0.3, 0.1];
    assert_eq!(tau_b(&t, &t), Some(1.0));
    let swapped = [0.5, 0.1, 0.3];
    assert!((tau_b(&t, &swapped).unwrap() - 1.0 / 3.0).abs() < 1e-15);
    assert_eq!(tau_b(&t, &[0.1, 0.3, 0.5]), Some(-1.0));
    assert_eq!(tau_b(&t, &[0.2, 0.2, 0.2]), None);
    let (mean, skipped) = kendall_tau(&rows(&[&t, &[0.0, 0.0, 0.0]]), &rows(&[&t, &t])).unwrap();
    assert_eq!((mean, skipped), (1.0, 1));
}

#[test]
fn top1_ir_examples() {
    assert!(
        (top1_ir(&rows(&[&[0.55, 0.10]]), &rows(&[&[0.2, 0.4]])).unwrap() - 0.10).abs() < 1e-15
    );
    let t = rows(&[&[0.55, 0.10], &[0.0, 0.3]]);
    assert!((top1_ir(&t, &t).unwrap() - 0.425).abs() < 1e-15);
}

#[test]
fn query_permutation_leaves_metrics_unchanged() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let t = random_matrix(&mut rng, 40, 5);
    let e = random_matrix(&mut rng, 40, 5);
    let mut idx: Vec<usize> = (0..40).collect();
    idx.shuffle(&mut rng);
    let tp: Vec<_> = idx.iter().map(|&i| t[i].clone()).collect();
    let ep: Vec<_> = idx.iter().map(|&i| e[i].clone()).collect();
    for f in [v_acc, top1_acc, mc_acc] {
        assert!((f(&t, &e, 0.1).unwrap() - f(&tp, &ep, 0.1).unwrap()).abs() < 1e-12);
    }
}

#[test]
fn tau_is_antisymmetric_under_reversal() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..100 {
        let t: Vec<f64> = (0..6).map(|_| rng.gen::<f64>()).collect();
        let e: Vec<f64> = (0..6).map(|_| rng.gen::<f64>()).collect();
        let rev: Vec<f64> = e.iter().map(|v| -v).collect();
        assert!((tau_b(&t, &e).unwrap() + tau_b(&t, &rev).unwrap()).abs() < 1e-12);
    }
}

#[test]
fn oracle_top1_ir_is_an_upper_bound() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let t = random_matrix(&mut rng, 30, 5);
    let best = top1_ir(&t, &t).unwrap();
    for _ in 0..20 {
        let e = random_matrix(&mut rng, 30, 5);
        assert!(top1_ir(&t, &e).unwrap() <= best);
    }
}

#[test]
fn report_serialises_without_timing_by_default() {
    let t = rows(&[&[0.5, 0.1]]);
    let r = MetricsReport::compute(&t, &t, &MetricOptions::default()).unwrap();
    let json = serde_json::to_string(&r).unwrap();
    assert!(!json.contains("timing"));
    let back: MetricsReport = serde_json::from_str(&json).unwrap();
    assert_eq!(back, r);
    assert_eq!(
        MetricsReport::csv_header().split(',').count(),
        r.csv_row().split(',').count()
    );
    assert_eq!(r.get("top1_acc"), Some(1.0));
    assert_eq!(r.get("nope"), None);
}

#[test]
fn variant_names_round_trip() {
    for v in Variant::all() {
        assert_eq!(Variant::parse(&v.name()).unwrap(), v);
    }
    assert_eq!(
        Variant::parse("only-kpi").unwrap(),
        Variant::Only(Modality::Kpi)
    );
    assert_eq!(
        Variant::parse("bogus").unwrap_err().category(),
        "invalid_config"
    );
    assert_eq!(
        Variant::parse_list("full, concat").unwrap(),
        vec![Variant::Full, Variant::Concat]
    );
    assert_eq!(
        Variant::parse_list("all").unwrap().len(),
        Variant::all().len()
    );

    let base = TrainConfig::default();
    assert_eq!(Variant::MseOnly.configure(&base).lambda, 0.0);
    assert_eq!(
        Variant::NoGate.configure(&base).model.architecture,
        Architecture::NoGate
    );
    assert_eq!(
        Variant::Main(Modality::Plan)
            .configure(&base)
            .model
            .fusion
            .main,
        Modality::Plan
    );
    assert!(!Variant::NoPretrain.uses_pretraining());
}

fn sample_table() -> VariantTable {
    let t = rows(&[&[0.5, 0.1, 0.0], &[0.0, 0.3, 0.2]]);
    let good = MetricsReport::compute(&t, &t, &MetricOptions::default()).unwrap();
    let bad = MetricsReport::compute(
        &t,
        &rows(&[&[0.1, 0.5, 0.0], &[0.3, 0.0, 0.2]]),
        &MetricOptions::default(),
    )
    .unwrap();
    VariantTable::new(
        vec![
            ("full".into(), vec![good.clone(), good.clone(), bad.clone()]),
            ("concat".into(), vec![bad.clone(), bad.clone(), good]),
        ],
        vec![1, 2, 3],
    )
}

#[test]
fn variant_table_counts_wins_and_renders() {
    let tab = sample_table();
    assert_eq!(tab.wins("full", "concat", "top1_acc"), 2);
    assert_eq!(tab.wins("concat", "full", "top1_acc"), 1);
    assert_eq!(tab.wins("full", "concat", "mse_mean"), 2);
    assert_eq!(tab.wins("full", "missing", "tau"), 0);
    let (mean, std) = tab.row("full").unwrap().summary("top1_acc");
    assert!((mean - 2.0 / 3.0).abs() < 1e-12 && (std - (2.0f64 / 9.0).sqrt()).abs() < 1e-12);

    assert_eq!(tab.to_csv().lines().count(), 1 + 6);
    assert!(tab.to_text().lines().nth(1).unwrap().starts_with("full"));
    assert!(tab.to_svg("tau").starts_with("<svg"));
    let back: VariantTable = serde_json::from_str(&tab.to_json()).unwrap();
    assert_eq!(back, tab);
}

#[test]
fn lambda_sweep_spread() {
    let tab = sample_table();
    let sweep = LambdaSweep {
        seed: 1,
        rows: tab.rows[0]
            .runs
            .iter()
            .zip([1.0, 3.0, 7.0])
            .map(|(r, lambda)| LambdaRow {
                lambda,
                report: r.clone(),
            })
            .collect(),
    };
    assert_eq!(sweep.spread("top1_acc"), 1.0);
    assert_eq!(sweep.to_csv().lines().count(), 4);
    assert!(sweep.to_text().contains("spread top1_acc"));
}

fn small_workload() -> Dataset {
    let cfg = GenConfig {
        total: 120,
        labeled: 60,
        ..GenConfig::default()
    };
    generate_workload(&cfg, 21).unwrap()
}

#[test]
fn oracle_revisions_bound_any_other_choice() {
    let ds = small_workload();
    let sim = ds.simulator.as_ref().unwrap();
    let test: Vec<QueryRecord> = ds.labeled().cloned().collect();
    let oracle = oracle_estimates(&test, Some(sim)).unwrap();
    let best = end_to_end_improvement(&test, &oracle, sim).unwrap();
    assert_eq!(best.n_queries, test.len());
    assert!(best.improvement_pct > 0.0 && best.revised_s < best.original_s);

    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let guesses = random_matrix(&mut rng, test.len(), ds.r());
    let other = end_to_end_improvement(&test, &guesses, sim).unwrap();
    assert!(other.improvement_pct <= best.improvement_pct + 1e-9);
    assert_eq!(other.original_s, best.original_s);
}

#[test]
fn end_to_end_needs_specs() {
    let ds = small_workload();
    let sim = ds.simulator.as_ref().unwrap();
    let mut recs: Vec<QueryRecord> = ds.labeled().take(3).cloned().collect();
    recs[1].spec = None;
    let est = oracle_estimates(&recs, Some(sim)).unwrap();
    assert_eq!(
        end_to_end_improvement(&recs, &est, sim)
            .unwrap_err()
            .category(),
        "unsupported"
    );
    assert_eq!(
        end_to_end_improvement(&recs[..1], &est, sim)
            .unwrap_err()
            .category(),
        "shape_error"
    );
    recs[1].impacts = None;
    assert_eq!(
        oracle_estimates(&recs, None).unwrap_err().category(),
        "unsupported"
    );
}

#[test]
fn harness_rejects_empty_requests() {
    let ds = small_workload();
    let cfg = HarnessConfig {
        train: TrainConfig::default(),
        pretrain_epochs: 0,
    };
    assert_eq!(
        run_variants(&ds, &[], &[1], &cfg).unwrap_err().category(),
        "invalid_config"
    );
    assert_eq!(
        run_variants(&ds, &[Variant::Full], &[], &cfg)
            .unwrap_err()
            .category(),
        "invalid_config"
    );
}
