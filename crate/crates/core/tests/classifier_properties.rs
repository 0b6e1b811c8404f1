use deepfeat_core::classifiers::forest::{fit_forest, ForestConfig};
use deepfeat_core::classifiers::gbdt::{fit_gbdt, GbdtConfig};
use deepfeat_core::classifiers::knn::{KnnModel, Metric};
use deepfeat_core::classifiers::mlp::MlpModel;
use deepfeat_core::classifiers::serialize::write_model;
use deepfeat_core::classifiers::svm::{kkt_violation, train_binary, Kernel};
use deepfeat_core::classifiers::tree::{
    grow_tree, Columns, Criterion, Node, ThresholdMode, TreeConfig,
};
use deepfeat_core::classifiers::{
    fit, gbdt_feature_gain, predict, rf_feature_importance, ClassifierKind, HyperParams,
    TrainedModel,
};
use deepfeat_core::rng::Rng;
use deepfeat_core::synthetic::{gaussian_classes, injected_signal};
use ndarray::{array, Array2, Axis};
use proptest::prelude::*;

fn noise(n: usize, d: usize, seed: u64) -> Array2<f64> {
    let mut rng = Rng::new(seed);
    Array2::from_shape_simple_fn((n, d), || rng.normal())
}

fn small_params(kind: ClassifierKind) -> HyperParams {
    match kind {
        ClassifierKind::Rf | ClassifierKind::Et => HyperParams::new().with("n_trees", 25i64),
        ClassifierKind::Gbdt => HyperParams::new()
            .with("n_trees", 20i64)
            .with("min_leaf", 5i64),
        ClassifierKind::Mlp => HyperParams::new()
            .with("hidden", 16i64)
            .with("max_epochs", 20i64),
        ClassifierKind::Knn => HyperParams::new().with("k", 1i64),
        _ => HyperParams::new(),
    }
}

fn accuracy(a: &[usize], b: &[usize]) -> f64 {
    a.iter().zip(b).filter(|(x, y)| x == y).count() as f64 / a.len() as f64
}

#[test]
fn serialized_models_do_not_depend_on_thread_count() {
    let (x, y) = gaussian_classes(3, 40, 6, 2.0, 5);
    let run = |threads: usize, kind: ClassifierKind| -> Vec<u8> {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap();
        pool.install(|| write_model(&fit(kind, x.view(), &y, 3, &small_params(kind), 17).unwrap()))
    };
    for kind in ClassifierKind::ALL {
        assert_eq!(run(1, kind), run(6, kind), "{kind}");
        assert_eq!(run(3, kind), run(3, kind), "{kind}");
    }
}

#[test]
fn relabeling_classes_permutes_predictions() {
    // Queries sit near the class centres so no vote or score is tied; a tie
    // resolves to the smallest class index and is not relabeling-invariant.
    let (x, y) = gaussian_classes(3, 50, 5, 3.0, 8);
    let (query, _) = gaussian_classes(3, 20, 5, 3.0, 9);
    let pi = [2, 0, 1];
    let y_perm: Vec<usize> = y.iter().map(|&c| pi[c]).collect();
    for kind in [
        ClassifierKind::Lr,
        ClassifierKind::Knn,
        ClassifierKind::Rf,
        ClassifierKind::Et,
        ClassifierKind::Gbdt,
    ] {
        let p = small_params(kind);
        let a = predict(&fit(kind, x.view(), &y, 3, &p, 4).unwrap(), query.view()).unwrap();
        let b = predict(
            &fit(kind, x.view(), &y_perm, 3, &p, 4).unwrap(),
            query.view(),
        )
        .unwrap();
        let mapped: Vec<usize> = a.iter().map(|&c| pi[c]).collect();
        assert_eq!(mapped, b, "{kind}");
    }
}

#[test]
fn tree_ensembles_ignore_monotone_transforms() {
    let (x, y) = gaussian_classes(3, 40, 4, 1.5, 12);
    let cubed = x.mapv(|v| v * v * v);
    for kind in [ClassifierKind::Rf, ClassifierKind::Gbdt] {
        let p = small_params(kind);
        let a = predict(&fit(kind, x.view(), &y, 3, &p, 3).unwrap(), x.view()).unwrap();
        let b = predict(
            &fit(kind, cubed.view(), &y, 3, &p, 3).unwrap(),
            cubed.view(),
        )
        .unwrap();
        assert_eq!(a, b, "{kind}");
    }
    // Boosted thresholds are training values, so unseen points agree too.
    let q = noise(50, 4, 13);
    let p = small_params(ClassifierKind::Gbdt);
    let a = predict(
        &fit(ClassifierKind::Gbdt, x.view(), &y, 3, &p, 3).unwrap(),
        q.view(),
    )
    .unwrap();
    let b = predict(
        &fit(ClassifierKind::Gbdt, cubed.view(), &y, 3, &p, 3).unwrap(),
        q.mapv(|v| v * v * v).view(),
    )
    .unwrap();
    assert_eq!(a, b);
}

#[test]
fn separable_one_dimensional_logistic() {
    let mut rng = Rng::new(2);
    let mut rows = Vec::new();
    let mut y = Vec::new();
    for i in 0..100 {
        let c = i % 2;
        rows.push(if c == 0 { -1.0 } else { 1.0 } + 1e-3 * rng.normal());
        y.push(c);
    }
    let x = Array2::from_shape_vec((100, 1), rows).unwrap();
    let m = fit(ClassifierKind::Lr, x.view(), &y, 2, &HyperParams::new(), 0).unwrap();
    assert_eq!(accuracy(&predict(&m, x.view()).unwrap(), &y), 1.0);
}

#[test]
fn one_nearest_neighbour_recovers_training_labels() {
    let x = noise(80, 5, 21);
    let y: Vec<usize> = (0..80).map(|i| (i * 7) % 3).collect();
    let m = fit(
        ClassifierKind::Knn,
        x.view(),
        &y,
        3,
        &HyperParams::new().with("k", 1i64),
        0,
    )
    .unwrap();
    assert_eq!(predict(&m, x.view()).unwrap(), y);
}

/// All-pairs scan with a full sort and an explicit tally.
fn brute_force_knn(
    x: &Array2<f64>,
    y: &[usize],
    k: usize,
    q: &[f64],
    metric: Metric,
    classes: usize,
) -> usize {
    let mut d: Vec<(f64, usize)> = (0..x.nrows())
        .map(|i| {
            let mut s = 0.0;
            for j in 0..x.ncols() {
                let diff = x[[i, j]] - q[j];
                s += match metric {
                    Metric::Euclidean => diff * diff,
                    Metric::Manhattan => diff.abs(),
                };
            }
            (s, i)
        })
        .collect();
    d.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
    let mut votes = vec![0usize; classes];
    for &(_, i) in d.iter().take(k) {
        votes[y[i]] += 1;
    }
    let top = *votes.iter().max().unwrap();
    votes.iter().position(|&v| v == top).unwrap()
}

#[test]
fn knn_matches_brute_force_scan() {
    let x = noise(120, 6, 31);
    let y: Vec<usize> = (0..120).map(|i| (i * 5 + i / 7) % 3).collect();
    let queries = noise(50, 6, 32);
    for metric in [Metric::Euclidean, Metric::Manhattan] {
        for k in [1, 4, 7] {
            let m = KnnModel {
                k,
                metric,
                x: x.clone(),
                y: y.clone(),
                n_classes: 3,
            };
            for q in queries.rows() {
                let want = brute_force_knn(&x, &y, k, q.as_slice().unwrap(), metric, 3);
                assert_eq!(m.predict_row(q), want);
            }
        }
    }
}

#[test]
fn extra_trees_memorize_unique_rows() {
    let (x, y) = gaussian_classes(3, 60, 8, 1.0, 44);
    let m = fit(
        ClassifierKind::Et,
        x.view(),
        &y,
        3,
        &HyperParams::new().with("n_trees", 64i64),
        1,
    )
    .unwrap();
    assert!(accuracy(&predict(&m, x.view()).unwrap(), &y) >= 0.99);
}

#[test]
fn duplicated_rows_get_identical_predictions() {
    let (x, y) = gaussian_classes(3, 30, 4, 2.0, 45);
    let mut q = noise(20, 4, 46);
    let dup = q.row(3).to_owned();
    q.row_mut(7).assign(&dup);
    q.row_mut(15).assign(&dup);
    for kind in ClassifierKind::ALL {
        let m = fit(kind, x.view(), &y, 3, &small_params(kind), 2).unwrap();
        let p = predict(&m, q.view()).unwrap();
        assert!(p[3] == p[7] && p[7] == p[15], "{kind}");
        assert!(p.iter().all(|&c| c < 3));
    }
}

#[test]
fn four_point_tree_splits_between_two_and_three() {
    let x = array![[1.0], [2.0], [3.0], [4.0]];
    let cols = Columns::from_view(x.view());
    let cfg = TreeConfig {
        criterion: Criterion::Gini,
        max_features: 1,
        threshold_mode: ThresholdMode::Exhaustive,
        min_leaf: 1,
        max_depth: None,
    };
    let t = grow_tree(
        &cols,
        &[0, 0, 1, 1],
        2,
        &[0, 1, 2, 3],
        &cfg,
        &mut Rng::new(0),
    );
    match &t.nodes[0] {
        Node::Split {
            feature,
            threshold,
            left,
            right,
            ..
        } => {
            assert_eq!((*feature, *threshold), (0, 2.5));
            for (child, class) in [(left, 0), (right, 1)] {
                let Node::Leaf { distribution } = &t.nodes[*child] else {
                    panic!("child must be a leaf")
                };
                assert_eq!(distribution[class], 1.0);
            }
        }
        _ => panic!("root must split"),
    }
    let pure = grow_tree(
        &cols,
        &[1, 1, 1, 1],
        2,
        &[0, 1, 2, 3],
        &cfg,
        &mut Rng::new(0),
    );
    assert_eq!(
        pure.nodes,
        vec![Node::Leaf {
            distribution: vec![0.0, 1.0]
        }]
    );
}

#[test]
fn exhaustive_root_gain_dominates_random_thresholds() {
    let x = noise(200, 5, 51);
    let mut rng = Rng::new(52);
    let y: Vec<usize> = (0..200)
        .map(|i| usize::from(x[[i, 1]] + 0.5 * rng.normal() > 0.0))
        .collect();
    let cols = Columns::from_view(x.view());
    let rows: Vec<usize> = (0..200).collect();
    let cfg = TreeConfig {
        criterion: Criterion::Gini,
        max_features: 5,
        threshold_mode: ThresholdMode::Exhaustive,
        min_leaf: 1,
        max_depth: Some(1),
    };
    let best = grow_tree(&cols, &y, 2, &rows, &cfg, &mut Rng::new(0)).root_gain();
    let random_cfg = TreeConfig {
        threshold_mode: ThresholdMode::Random,
        ..cfg
    };
    let mut total = 0.0;
    for s in 0..100 {
        let g = grow_tree(&cols, &y, 2, &rows, &random_cfg, &mut Rng::new(s)).root_gain();
        assert!(g <= best + 1e-12);
        total += g;
    }
    assert!(best >= total / 100.0);
}

#[test]
fn boosting_loss_never_increases() {
    let (x, y) = gaussian_classes(3, 50, 5, 1.0, 61);
    for cfg in [
        GbdtConfig {
            n_trees: 40,
            ..GbdtConfig::default()
        },
        GbdtConfig {
            n_trees: 30,
            max_leaves: 7,
            learning_rate: 0.3,
            min_leaf: 3,
            ..GbdtConfig::default()
        },
    ] {
        let (_, losses) = fit_gbdt(x.view(), &y, 3, &cfg);
        assert_eq!(losses.len(), cfg.n_trees + 1);
        for w in losses.windows(2) {
            assert!(w[1] <= w[0] + 1e-12, "{} > {}", w[1], w[0]);
        }
    }
}

#[test]
fn importance_finds_the_injected_feature() {
    let (x, y) = injected_signal(200, 8, 3, 0, 71);
    let g = fit(
        ClassifierKind::Gbdt,
        x.view(),
        &y,
        3,
        &small_params(ClassifierKind::Gbdt),
        0,
    )
    .unwrap();
    let gain = gbdt_feature_gain(&g).unwrap();
    assert!(gain.iter().all(|&v| v >= 0.0));
    assert_eq!(argmax(&gain), 0);
    let f = fit(
        ClassifierKind::Rf,
        x.view(),
        &y,
        3,
        &small_params(ClassifierKind::Rf),
        0,
    )
    .unwrap();
    let imp = rf_feature_importance(&f).unwrap();
    assert!((imp.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    assert_eq!(argmax(&imp), 0);
}

fn argmax(v: &[f64]) -> usize {
    (0..v.len()).fold(0, |b, i| if v[i] > v[b] { i } else { b })
}

#[test]
fn gain_totals_match_split_records() {
    let (x, y) = gaussian_classes(3, 40, 5, 1.0, 72);
    let (m, _) = fit_gbdt(
        x.view(),
        &y,
        3,
        &GbdtConfig {
            n_trees: 10,
            ..GbdtConfig::default()
        },
    );
    let per_feature: f64 = m.feature_gain(5).iter().sum();
    let mut total = 0.0;
    for tree in m.stages.iter().flatten() {
        for node in &tree.nodes {
            if let deepfeat_core::classifiers::gbdt::RegNode::Split { gain, .. } = node {
                assert!(*gain > 0.0);
                total += gain;
            }
        }
    }
    assert!((per_feature - total).abs() <= 1e-9 * total.max(1.0));
}

#[test]
fn pure_data_forest_has_zero_importance() {
    let x = noise(30, 4, 73);
    let forest = fit_forest(
        x.view(),
        &[1; 30],
        2,
        &ForestConfig::random_forest(10, 4),
        0,
    );
    assert_eq!(forest.feature_importance(4), vec![0.0; 4]);
}

fn permute_columns(x: &Array2<f64>, perm: &[usize]) -> Array2<f64> {
    // Column j of the result is column perm[j] of the input.
    x.select(Axis(1), perm)
}

#[test]
fn importance_vectors_follow_column_permutations() {
    // Shallow trees on many rows keep split gains free of exact ties, which
    // would otherwise resolve to the smaller column index.
    let (x, y) = gaussian_classes(3, 100, 6, 1.0, 81);
    let perm = [3, 0, 5, 1, 4, 2];
    let xp = permute_columns(&x, &perm);
    let close = |a: f64, b: f64| (a - b).abs() <= 1e-9 * a.abs().max(1.0);

    let gp = HyperParams::new().with("n_trees", 15i64);
    let g =
        gbdt_feature_gain(&fit(ClassifierKind::Gbdt, x.view(), &y, 3, &gp, 0).unwrap()).unwrap();
    let gq =
        gbdt_feature_gain(&fit(ClassifierKind::Gbdt, xp.view(), &y, 3, &gp, 0).unwrap()).unwrap();
    for j in 0..6 {
        assert!(close(gq[j], g[perm[j]]), "gbdt feature {j}");
    }

    let rp = HyperParams::new()
        .with("n_trees", 20i64)
        .with("max_features", "all")
        .with("max_depth", 2i64);
    let r =
        rf_feature_importance(&fit(ClassifierKind::Rf, x.view(), &y, 3, &rp, 5).unwrap()).unwrap();
    let rq =
        rf_feature_importance(&fit(ClassifierKind::Rf, xp.view(), &y, 3, &rp, 5).unwrap()).unwrap();
    for j in 0..6 {
        assert!(close(rq[j], r[perm[j]]), "rf feature {j}");
    }
}

#[test]
fn svm_dual_is_feasible_at_convergence() {
    let (x, y) = gaussian_classes(2, 40, 3, 1.0, 91);
    let sign: Vec<f64> = y.iter().map(|&c| if c == 0 { 1.0 } else { -1.0 }).collect();
    for (kernel, c) in [(Kernel::Linear, 0.5), (Kernel::Rbf { gamma: 0.3 }, 5.0)] {
        let gram = kernel.gram(x.view());
        let m = train_binary(&gram, &sign, c, 1e-4, 5000, &mut Rng::new(1));
        assert!(m.converged);
        assert!(m.alpha.iter().all(|&a| (0.0..=c).contains(&a)));
        assert!(kkt_violation(&gram, &sign, &m.alpha, c) <= 1e-4);
    }
}

#[test]
fn mlp_gradients_match_central_differences() {
    let x = noise(5, 4, 101);
    let y = [0, 2, 1, 1, 0];
    let m = MlpModel::init(4, 6, 3, &mut Rng::new(102));
    let alpha = 1e-2;
    let (_, g) = m.loss_and_grad(x.view(), &y, alpha);
    let analytic = g.params_flat();
    let theta = m.params_flat();
    let h = 1e-6;
    let mut probe = m.clone();
    for i in 0..theta.len() {
        let mut t = theta.clone();
        t[i] = theta[i] + h;
        probe.set_params_flat(&t);
        let up = probe.loss_and_grad(x.view(), &y, alpha).0;
        t[i] = theta[i] - h;
        probe.set_params_flat(&t);
        let down = probe.loss_and_grad(x.view(), &y, alpha).0;
        let numeric = (up - down) / (2.0 * h);
        let rel = (numeric - analytic[i]).abs() / numeric.abs().max(analytic[i].abs()).max(1e-8);
        assert!(
            rel <= 1e-4 || (numeric - analytic[i]).abs() <= 1e-9,
            "param {i}: {numeric} vs {}",
            analytic[i]
        );
    }
}

fn model_for(kind: ClassifierKind, seed: u64) -> TrainedModel {
    let (x, y) = gaussian_classes(3, 20, 4, 2.0, seed);
    fit(kind, x.view(), &y, 3, &small_params(kind), seed).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn fit_is_a_pure_function(seed in 0u64..1000, k in 0usize..7) {
        let kind = ClassifierKind::ALL[k];
        prop_assert_eq!(write_model(&model_for(kind, seed)), write_model(&model_for(kind, seed)));
    }

    #[test]
    fn predictions_stay_in_range(seed in 0u64..1000, k in 0usize..7) {
        let kind = ClassifierKind::ALL[k];
        let m = model_for(kind, seed);
        let q = noise(10, 4, seed + 1) * 3.0;
        prop_assert!(predict(&m, q.view()).unwrap().iter().all(|&c| c < 3));
    }
}
