mod common;

use proptest::prelude::*;
use rcrank::evalkit::{self, MetricOptions, MetricsReport};
use rcrank::synthgen::impact_from_runtimes;
use rcrank::trainer::{loss_order, loss_pred, loss_valid, total_loss, LossWeights, OrderMode};

const GRID: [f64; 7] = [-0.1, 0.0, 0.05, 0.1, 0.2, 0.35, 0.5];

fn grid_matrix(n: usize, r: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(
        prop::collection::vec(prop::sample::select(GRID.to_vec()), r),
        n,
    )
}

fn pair() -> impl Strategy<Value = (Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    (1usize..12, prop::sample::select(vec![2usize, 5, 10]))
        .prop_flat_map(|(n, r)| (grid_matrix(n, r), grid_matrix(n, r)))
}

fn impacts(r: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-0.5f64..0.9, r)
}

proptest! {
    #[test]
    fn metrics_match_reference((t, e) in pair()) {
        let eps = 0.1;
        let rep = MetricsReport::compute(&t, &e, &MetricOptions::default()).unwrap();
        prop_assert!((rep.v_acc - common::v_acc(&t, &e, eps)).abs() <= 1e-12);
        prop_assert!((rep.top1_acc - common::top1(&t, &e, eps)).abs() <= 1e-12);
        let (m, s) = common::mse(&t, &e);
        prop_assert!((rep.mse_mean - m).abs() <= 1e-12);
        prop_assert!((rep.mse_std - s).abs() <= 1e-12);
        prop_assert!((rep.mc_acc - common::mc_acc(&t, &e, eps)).abs() <= 1e-12);
        prop_assert!((rep.tau - common::tau(&t, &e)).abs() <= 1e-12);
        prop_assert!((rep.top1_ir - common::top1_ir(&t, &e)).abs() <= 1e-12);
    }

    #[test]
    fn metrics_are_bounded((t, e) in pair()) {
        let rep = MetricsReport::compute(&t, &e, &MetricOptions::default()).unwrap();
        for v in [rep.v_acc, rep.top1_acc, rep.mc_acc] {
            prop_assert!((0.0..=1.0).contains(&v));
        }
        prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&rep.tau));
        prop_assert!(rep.mse_mean >= 0.0 && rep.mse_std >= 0.0);
    }

    #[test]
    fn perfect_estimates_score_one(t in (1usize..10, 2usize..8).prop_flat_map(|(n, r)| grid_matrix(n, r))) {
        let rep = MetricsReport::compute(&t, &t, &MetricOptions::default()).unwrap();
        prop_assert_eq!(rep.v_acc, 1.0);
        prop_assert_eq!(rep.mse_mean, 0.0);
        if rep.n_no_valid < t.len() {
            prop_assert_eq!(rep.mc_acc, 1.0);
        }
        if rep.n_no_valid + rep.n_tied_top1 < t.len() {
            prop_assert_eq!(rep.top1_acc, 1.0);
        }
    }

    #[test]
    fn tau_flips_with_reversed_estimates(t in impacts(6), e in impacts(6)) {
        let neg: Vec<f64> = e.iter().map(|v| -v).collect();
        match (evalkit::tau_b(&t, &e), evalkit::tau_b(&t, &neg)) {
            (Some(a), Some(b)) => prop_assert!((a + b).abs() < 1e-12),
            (a, b) => prop_assert_eq!(a.is_none(), b.is_none()),
        }
    }

    #[test]
    fn valid_list_is_sorted_and_thresholded(v in impacts(10)) {
        let l = evalkit::valid_list(&v, 0.1);
        prop_assert!(l.iter().all(|&j| v[j] >= 0.1));
        prop_assert_eq!(l.len(), v.iter().filter(|&&x| x >= 0.1).count());
        prop_assert!(l.windows(2).all(|w| v[w[0]] >= v[w[1]]));
    }

    #[test]
    fn impact_is_relative_runtime_saving(r in 0.01f64..100.0, frac in 0.0f64..1.5) {
        let rev = r * frac;
        let y = impact_from_runtimes(r, rev).unwrap();
        prop_assert!((y - (1.0 - frac)).abs() < 1e-12);
    }

    #[test]
    fn losses_are_nonnegative(y in impacts(5), yhat in impacts(5), lambda in 0.0f64..10.0) {
        let w = LossWeights { lambda, ..LossWeights::default() };
        let p = total_loss(&y, &yhat, &w).unwrap();
        prop_assert!(p.pred >= 0.0 && p.valid >= 0.0 && p.order >= 0.0);
        prop_assert!((p.total - (p.pred + lambda * (p.valid + p.order))).abs() < 1e-12);
        prop_assert!((p.pred - loss_pred(&y, &yhat).unwrap()).abs() < 1e-15);
    }

    #[test]
    fn order_loss_ignores_a_common_shift(y in impacts(5), yhat in impacts(5), c in -1.0f64..1.0) {
        let shifted: Vec<f64> = yhat.iter().map(|v| v + c).collect();
        for mode in [OrderMode::TruthPermuted, OrderMode::IndependentSort] {
            let a = loss_order(&y, &yhat, mode).unwrap();
            let b = loss_order(&y, &shifted, mode).unwrap();
            prop_assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn validity_loss_vanishes_beyond_the_margin(y in impacts(5)) {
        let (eps, eta) = (0.1, 0.02);
        let yhat: Vec<f64> = y.iter().map(|&v| if v < eps { eps - 2.0 * eta } else { eps + 2.0 * eta }).collect();
        prop_assert_eq!(loss_valid(&y, &yhat, eps, eta).unwrap(), 0.0);
    }
}
