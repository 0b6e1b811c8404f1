use deepfeat_core::dataset::{standardize_apply, standardize_fit};
use deepfeat_core::synthetic::gaussian_classes;
use deepfeat_core::tuning::*;
use deepfeat_core::ClassifierKind;
use ndarray::Array2;

fn benchmark() -> (Array2<f64>, Vec<usize>, Array2<f64>, Vec<usize>) {
    let (x, y) = gaussian_classes(3, 60, 8, 1.5, 21);
    let train: Vec<usize> = (0..180).filter(|i| i % 5 != 0).collect();
    let val: Vec<usize> = (0..180).filter(|i| i % 5 == 0).collect();
    let xt = x.select(ndarray::Axis(0), &train);
    let xv = x.select(ndarray::Axis(0), &val);
    let st = standardize_fit(&xt);
    (
        standardize_apply(&st, &xt),
        train.iter().map(|&i| y[i]).collect(),
        standardize_apply(&st, &xv),
        val.iter().map(|&i| y[i]).collect(),
    )
}

fn search(kind: ClassifierKind, budget: usize, seed: u64) -> SearchOutcome {
    let (xt, yt, xv, yv) = benchmark();
    random_search(
        kind,
        &default_space(kind),
        budget,
        xt.view(),
        &yt,
        xv.view(),
        &yv,
        3,
        seed,
        Objective::Accuracy,
    )
    .unwrap()
}

#[test]
fn running_best_never_decreases_and_larger_budget_is_no_worse() {
    let small = search(ClassifierKind::Knn, 1, 5);
    let large = search(ClassifierKind::Knn, 20, 5);
    assert_eq!(
        small.trials[0],
        TrialRecord {
            fit_seconds: small.trials[0].fit_seconds,
            ..large.trials[0].clone()
        }
    );
    let mut best = f64::NEG_INFINITY;
    for t in &large.trials {
        let next = best.max(t.val_score);
        assert!(next >= best);
        best = next;
    }
    assert_eq!(large.best_record().val_score, best);
    assert!(large.best_record().val_score >= small.best_record().val_score);
    let first_max = large
        .trials
        .iter()
        .position(|t| t.val_score == best)
        .unwrap();
    assert_eq!(large.best_trial, first_max);
}

#[test]
fn identical_seeds_give_identical_searches() {
    for kind in [ClassifierKind::Lr, ClassifierKind::Gbdt] {
        let a = search(kind, 4, 11);
        let b = search(kind, 4, 11);
        let strip = |o: &SearchOutcome| {
            o.trials
                .iter()
                .map(|t| (t.seed, t.params.clone(), t.val_score))
                .collect::<Vec<_>>()
        };
        assert_eq!(strip(&a), strip(&b));
        assert_eq!(a.best_trial, b.best_trial);
        let c = search(kind, 4, 12);
        assert_ne!(strip(&a), strip(&c));
    }
}

#[test]
fn trial_csv_has_one_row_per_trial() {
    let out = search(ClassifierKind::Lr, 6, 1);
    let text = trials_csv(&out.trials);
    let mut r = csv::Reader::from_reader(text.as_bytes());
    assert_eq!(
        r.headers().unwrap().iter().collect::<Vec<_>>().join(","),
        TRIAL_CSV_HEADER
    );
    let rows: Vec<csv::StringRecord> = r.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 6);
    for (i, row) in rows.iter().enumerate() {
        assert_eq!(row[0].parse::<usize>().unwrap(), i);
        let params: serde_json::Value = serde_json::from_str(&row[2]).unwrap();
        assert!(params.get("C").is_some());
        let score: f64 = row[3].parse().unwrap();
        assert!((score - out.trials[i].val_score).abs() < 1e-6);
    }
}
