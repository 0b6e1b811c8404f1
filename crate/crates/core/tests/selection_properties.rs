use deepfeat_core::classifiers::linear::fit_logistic;
use deepfeat_core::dataset::{standardize_apply, standardize_fit};
use deepfeat_core::feature_selection::*;
use deepfeat_core::rng::Rng;
use deepfeat_core::synthetic::injected_signal;
use ndarray::{Array2, ArrayView2};
use proptest::prelude::*;

fn standardized(x: &Array2<f64>) -> Array2<f64> {
    standardize_apply(&standardize_fit(x), x)
}

fn quick_gbdt() -> deepfeat_core::HyperParams {
    gbdt_selector_params().with("n_trees", 40i64)
}

fn quick_rf() -> deepfeat_core::HyperParams {
    rf_selector_params().with("n_trees", 60i64)
}

#[test]
fn tree_rankers_put_the_injected_feature_first() {
    for seed in 0..10 {
        let col = (seed as usize * 7) % 64;
        let (x, y) = injected_signal(400, 64, 3, col, seed);
        let g = rank_by_gbdt(x.view(), &y, 3, &quick_gbdt(), seed).unwrap();
        assert_eq!(g.order[0], col, "gbdt seed {seed}");
        let r = rank_by_rf(x.view(), &y, 3, &quick_rf(), seed).unwrap();
        assert_eq!(r.order[0], col, "rf seed {seed}");
    }
}

#[test]
fn duplicated_informative_column_outranks_noise() {
    let mut rng = Rng::new(5);
    let n = 300;
    let y: Vec<usize> = (0..n).map(|i| i % 2).collect();
    let signal: Vec<f64> = y.iter().map(|&c| c as f64 * 2.0 + rng.normal()).collect();
    let dup = [1, 4, 9, 13];
    let x = Array2::from_shape_fn((n, 16), |(i, j)| {
        if dup.contains(&j) {
            signal[i]
        } else {
            rng.normal()
        }
    });
    for r in [
        rank_by_gbdt(x.view(), &y, 2, &quick_gbdt(), 1).unwrap(),
        rank_by_rf(x.view(), &y, 2, &quick_rf(), 1).unwrap(),
    ] {
        assert!(dup.contains(&r.order[0]), "{:?}", r.method);
        let best_dup = dup.iter().map(|&j| r.scores[j]).fold(0.0, f64::max);
        for j in (0..16).filter(|j| !dup.contains(j)) {
            assert!(r.scores[j] < best_dup, "{:?} noise {j}", r.method);
        }
    }
}

#[test]
fn constant_input_gives_zero_scores_and_identity_order() {
    let x = Array2::from_elem((20, 5), 3.0);
    let y: Vec<usize> = (0..20).map(|i| i % 2).collect();
    for r in [
        rank_by_gbdt(x.view(), &y, 2, &quick_gbdt(), 0).unwrap(),
        rank_by_rf(x.view(), &y, 2, &quick_rf(), 0).unwrap(),
    ] {
        assert_eq!(r.scores, vec![0.0; 5]);
        assert_eq!(r.order, vec![0, 1, 2, 3, 4]);
    }
}

fn lasso(x: ArrayView2<'_, f64>, y: &[usize], k: usize, lambda: f64) -> LassoFit {
    fit_lasso(
        x,
        y,
        k,
        &LassoParams {
            lambda,
            max_iter: 20_000,
            tol: 1e-9,
        },
    )
}

#[test]
fn lasso_keeps_signal_and_drops_most_noise() {
    let (x, y) = injected_signal(400, 64, 3, 0, 3);
    let xs = standardized(&x);
    let lmax = lambda_max(xs.view(), &y, 3);
    let (r, fit) = rank_by_lasso(
        xs.view(),
        &y,
        3,
        &LassoParams {
            lambda: 0.1 * lmax,
            ..LassoParams::default()
        },
    )
    .unwrap();
    assert!(fit.converged);
    assert!(r.scores[0] > 0.0);
    let zeroed = r.scores[1..].iter().filter(|&&s| s == 0.0).count();
    assert!(
        zeroed as f64 >= 0.8 * 63.0,
        "only {zeroed} of 63 noise features zeroed"
    );
}

#[test]
fn two_class_lasso_fixture() {
    let (x, y) = injected_signal(200, 10, 2, 0, 11);
    let xs = standardized(&x);
    let lmax = lambda_max(xs.view(), &y, 2);
    let fit = lasso(xs.view(), &y, 2, 0.1 * lmax);
    let s = lasso_scores(&fit.model);
    assert!(s[0] > 0.0);
    assert!(s[1..].iter().filter(|&&v| v == 0.0).count() >= 8);
}

fn generic_fixture() -> (Array2<f64>, Vec<usize>) {
    let mut rng = Rng::new(17);
    let x = Array2::from_shape_simple_fn((300, 6), || rng.normal());
    let y = (0..300)
        .map(|i| {
            let s = x[[i, 0]] - 0.5 * x[[i, 1]] + 0.8 * rng.normal();
            if s < -0.5 {
                0
            } else if s < 0.5 {
                1
            } else {
                2
            }
        })
        .collect();
    (x, y)
}

#[test]
fn unpenalized_lasso_matches_logistic_regression() {
    let (x, y) = generic_fixture();
    let fit = lasso(x.view(), &y, 3, 0.0);
    assert!(fit.converged);
    let scores = lasso_scores(&fit.model);
    assert_eq!(scores.iter().filter(|&&s| s != 0.0).count(), 6);
    let (lr, out) = fit_logistic(x.view(), &y, 3, 1e12, 1e-7, 5000);
    assert!(out.converged);
    for (a, b) in scores.iter().zip(lasso_scores(&lr)) {
        assert!((a - b).abs() < 1e-4, "{a} vs {b}");
    }
}

#[test]
fn objective_never_increases() {
    let (x, y) = generic_fixture();
    let lmax = lambda_max(x.view(), &y, 3);
    for frac in [0.0, 0.01, 0.1, 0.5] {
        let fit = lasso(x.view(), &y, 3, frac * lmax);
        for w in fit.objective.windows(2) {
            assert!(w[1] <= w[0] + 1e-10, "lambda {frac}: {} -> {}", w[0], w[1]);
        }
    }
}

#[test]
fn lambda_max_agrees_with_bisection() {
    let (x, y) = generic_fixture();
    let all_zero = |lambda: f64| {
        fit_lasso(
            x.view(),
            &y,
            3,
            &LassoParams {
                lambda,
                max_iter: 200,
                tol: 1e-12,
            },
        )
        .model
        .weights
        .iter()
        .all(|&w| w == 0.0)
    };
    let (mut lo, mut hi) = (0.0, 10.0);
    assert!(all_zero(hi) && !all_zero(lo));
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if all_zero(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let lmax = lambda_max(x.view(), &y, 3);
    assert!(
        (hi - lmax).abs() <= 1e-9 * lmax,
        "bisection {hi} vs formula {lmax}"
    );
    assert!(all_zero(lmax));
}

#[test]
fn lambda_grid_pick_prefers_validation_accuracy() {
    let (x, y) = generic_fixture();
    let (xt, yt) = (
        x.slice(ndarray::s![..200, ..]).to_owned(),
        y[..200].to_vec(),
    );
    let (xv, yv) = (
        x.slice(ndarray::s![200.., ..]).to_owned(),
        y[200..].to_vec(),
    );
    let (r, choice) =
        select_lasso(xt.view(), &yt, xv.view(), &yv, 3, &LassoParams::default()).unwrap();
    assert_eq!(choice.trials.len(), 5);
    let best = choice.trials.iter().map(|t| t.1).fold(0.0, f64::max);
    assert!(choice
        .trials
        .iter()
        .any(|&(l, a)| l == choice.lambda && a == best));
    assert_eq!(r.width(), 6);
}

proptest! {
    #[test]
    fn selections_nest(scores in prop::collection::vec(0.0f64..10.0, 1..300), a in 0.01f64..1.0, b in 0.01f64..1.0) {
        let r = ImportanceRanking::new(SelectorMethod::Rf, scores).unwrap();
        let (p1, p2) = if a <= b { (a, b) } else { (b, a) };
        let small = select_top_fraction(&r, p1).unwrap();
        let large = select_top_fraction(&r, p2).unwrap();
        prop_assert!(small.iter().all(|j| large.contains(j)));
        prop_assert!(small.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn order_is_a_permutation_consistent_with_scores(scores in prop::collection::vec(prop_oneof![Just(0.0), Just(1.0), 0.0f64..2.0], 1..200)) {
        let r = ImportanceRanking::new(SelectorMethod::Gbdt, scores.clone()).unwrap();
        let mut seen = r.order.clone();
        seen.sort_unstable();
        prop_assert_eq!(seen, (0..scores.len()).collect::<Vec<_>>());
        for w in r.order.windows(2) {
            let (a, b) = (w[0], w[1]);
            prop_assert!(scores[a] > scores[b] || (scores[a] == scores[b] && a < b));
        }
    }

    #[test]
    fn subset_equals_copy_loop(rows in 1usize..12, cols in 1usize..20, mask in prop::collection::vec(any::<bool>(), 20), seed in any::<u64>()) {
        let mut rng = Rng::new(seed);
        let x = Array2::from_shape_simple_fn((rows, cols), || rng.normal());
        let idx: Vec<usize> = (0..cols).filter(|&j| mask[j]).collect();
        let got = apply_subset(x.view(), &idx).unwrap();
        let mut want = Array2::zeros((rows, idx.len()));
        for i in 0..rows {
            for (c, &j) in idx.iter().enumerate() {
                want[[i, c]] = x[[i, j]];
            }
        }
        prop_assert_eq!(got, want);
    }
}
