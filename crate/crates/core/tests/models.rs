mod oracles;

use rand::Rng;
use readmit::features::{self, FeatureSchema, Matrix, MissingAge};
use readmit::models::{
    fit_gbm, fit_gbm_traced, fit_logistic, penalized_gradient, penalized_log_likelihood,
    predict_proba_gbm, predict_proba_logistic, GbmParams, LogisticParams, Model, ModelKind,
    Node, SavedModel, TrainConfig,
};
use readmit::synthgen::{self, CohortSpec};

#[test]
fn logistic_matches_coordinate_newton_oracle() {
    let params = LogisticParams::default();
    for seed in 0..8 {
        let (x, y) = oracles::logistic_dataset(seed, 50, 3);
        let m = fit_logistic(&Matrix::from_rows(&x), &y, &params).unwrap();
        assert!(m.converged);
        let beta = oracles::logistic_coordinate_newton(&x, &y, params.ridge);
        assert!((m.intercept - beta[0]).abs() < 1e-6, "seed {seed}: {} vs {}", m.intercept, beta[0]);
        for j in 0..3 {
            assert!((m.weights[j] - beta[j + 1]).abs() < 1e-6, "seed {seed} weight {j}");
        }
    }
}

#[test]
fn logistic_gradient_vanishes_and_loss_improves() {
    let params = LogisticParams::default();
    for seed in 100..110 {
        let (x, y) = oracles::logistic_dataset(seed, 80, 4);
        let xm = Matrix::from_rows(&x);
        let m = fit_logistic(&xm, &y, &params).unwrap();
        let g = penalized_gradient(&xm, &y, m.intercept, &m.weights, params.ridge);
        let gmax = g.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        assert!(gmax < 1e-6, "seed {seed}: |grad|inf = {gmax}");
        let fitted = penalized_log_likelihood(&xm, &y, m.intercept, &m.weights, params.ridge);
        let zero = penalized_log_likelihood(&xm, &y, 0.0, &[0.0; 4], params.ridge);
        assert!(fitted >= zero);
        // objective agrees with the oracle's independent formula
        let mut beta = vec![m.intercept];
        beta.extend(&m.weights);
        assert!((fitted - oracles::objective(&x, &y, &beta, params.ridge)).abs() < 1e-9);
    }
}

#[test]
fn gradient_matches_finite_differences() {
    let mut r = oracles::rng(7);
    for seed in 0..10 {
        let (x, y) = oracles::logistic_dataset(200 + seed, 40, 3);
        let xm = Matrix::from_rows(&x);
        let b0: f64 = r.gen_range(-1.0..1.0);
        let w: Vec<f64> = (0..3).map(|_| r.gen_range(-1.0..1.0)).collect();
        let ridge = 0.5;
        let g = penalized_gradient(&xm, &y, b0, &w, ridge);
        let h = 1e-5;
        for k in 0..4 {
            let shift = |d: f64| {
                let mut b = b0;
                let mut ww = w.clone();
                if k == 0 {
                    b += d;
                } else {
                    ww[k - 1] += d;
                }
                penalized_log_likelihood(&xm, &y, b, &ww, ridge)
            };
            let fd = (shift(h) - shift(-h)) / (2.0 * h);
            assert!((fd - g[k]).abs() <= 1e-5 * (1.0 + g[k].abs()), "coordinate {k}: {fd} vs {}", g[k]);
        }
    }
}

#[test]
fn logistic_probabilities_follow_the_coefficients() {
    let (x, y) = oracles::logistic_dataset(31, 60, 3);
    let xm = Matrix::from_rows(&x);
    let m = fit_logistic(&xm, &y, &LogisticParams::default()).unwrap();
    let p = predict_proba_logistic(&m, &xm).unwrap();
    for (row, pi) in x.iter().zip(p) {
        let z = m.intercept + row.iter().zip(&m.weights).map(|(a, b)| a * b).sum::<f64>();
        assert!((pi - 1.0 / (1.0 + (-z).exp())).abs() < 1e-9);
    }
}

fn stump_params() -> GbmParams {
    GbmParams {
        n_trees: 1,
        max_depth: 1,
        ..GbmParams::default()
    }
}

fn random_tree_data(seed: u64) -> (Vec<Vec<f64>>, Vec<u8>) {
    let mut r = oracles::rng(seed);
    let n = r.gen_range(10..60);
    let d = r.gen_range(1..5);
    loop {
        // a coarse grid makes repeated values and tied splits common
        let x: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..d).map(|_| f64::from(r.gen_range(0..8)) * 0.5).collect())
            .collect();
        let y: Vec<u8> = (0..n).map(|_| u8::from(r.gen_bool(0.35))).collect();
        if y.contains(&0) && y.contains(&1) {
            return (x, y);
        }
    }
}

#[test]
fn single_stump_matches_exhaustive_search() {
    for seed in 0..40 {
        let (x, y) = random_tree_data(seed);
        let xm = Matrix::from_rows(&x);
        let model = fit_gbm(&xm, &y, &stump_params()).unwrap();
        let oracle = oracles::exhaustive_stump(&x, &y);
        let split = match model.trees[0].nodes[0] {
            Node::Split { feature, threshold, .. } => Some((feature, threshold)),
            Node::Leaf { .. } => None,
        };
        assert_eq!(split, oracle.split, "seed {seed}");
        let p = predict_proba_gbm(&model, &xm).unwrap();
        for (row, pi) in x.iter().zip(p) {
            assert!((pi - oracle.predict(row, 0.1)).abs() < 1e-9, "seed {seed}");
        }
    }
}

fn small_cohort_data(n: usize) -> (Matrix, Vec<u8>) {
    let cohort = synthgen::generate(&CohortSpec { n, ..CohortSpec::default() }).unwrap();
    let enc = features::encode(&cohort, &FeatureSchema::new(false), MissingAge::ImputeMedian).unwrap();
    let (ds, _) = features::standardize(&enc.dataset, None).unwrap();
    (ds.matrix, ds.labels)
}

#[test]
fn boosting_loss_never_increases() {
    let (x, y) = small_cohort_data(800);
    let (_, trace) = fit_gbm_traced(&x, &y, &GbmParams::default()).unwrap();
    assert_eq!(trace.len(), 101);
    for w in trace.windows(2) {
        assert!(w[1] <= w[0] + 1e-12, "{} -> {}", w[0], w[1]);
    }
    assert!(trace[100] < trace[0]);
}

#[test]
fn gbm_is_deterministic_and_bounded() {
    let (x, y) = small_cohort_data(400);
    let a = fit_gbm(&x, &y, &GbmParams::default()).unwrap();
    let b = fit_gbm(&x, &y, &GbmParams::default()).unwrap();
    assert_eq!(a, b);
    for t in &a.trees {
        assert!(t.depth() <= 3);
        for node in &t.nodes {
            if let Node::Leaf { value } = node {
                assert!(value.abs() <= 10.0);
            }
        }
    }
}

#[test]
fn saved_model_round_trips_through_json() {
    let cohort = synthgen::generate(&CohortSpec { n: 300, ..CohortSpec::default() }).unwrap();
    let schema = FeatureSchema::new(false);
    let enc = features::encode(&cohort, &schema, MissingAge::ImputeMedian).unwrap();
    let (ds, standardizer) = features::standardize(&enc.dataset, None).unwrap();
    for kind in [ModelKind::Gbm, ModelKind::Logistic] {
        let config = TrainConfig::default();
        let model = Model::fit(kind, &ds.matrix, &ds.labels, &config).unwrap();
        let saved = SavedModel {
            version: readmit::TOOL_VERSION.into(),
            config,
            columns: schema.columns.clone(),
            standardizer: standardizer.clone(),
            model,
            run: serde_json::Value::Null,
        };
        let back = SavedModel::from_json(&saved.to_json()).unwrap();
        assert_eq!(back, saved);
        let p1 = saved.predict_proba(&enc.dataset.matrix).unwrap();
        let p2 = back.predict_proba(&enc.dataset.matrix).unwrap();
        assert_eq!(p1, p2);
        assert_eq!(p1, saved.model.predict_proba(&ds.matrix).unwrap());
    }
}
