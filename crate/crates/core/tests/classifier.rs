mod support;

use nalgebra::{DMatrix, DVector};
use pairwhiten::classifier::{
    grid_search_c, predict_scores, train_logreg, LogisticObjective, Metric, SolverOptions,
    DEFAULT_C_GRID,
};
use proptest::prelude::*;

fn gaussian_classes(
    n: usize,
    mean_shift: &[f64],
    cov_chol: &DMatrix<f64>,
    seed: u64,
) -> (DMatrix<f64>, Vec<u8>) {
    let d = mean_shift.len();
    let mut g = support::rng(seed);
    let y: Vec<u8> = (0..n).map(|i| (i % 2) as u8).collect();
    let mut x = DMatrix::zeros(n, d);
    for i in 0..n {
        let e = DVector::from_fn(d, |_, _| support::normal(&mut g));
        let v = cov_chol * e;
        for j in 0..d {
            x[(i, j)] = v[j] + if y[i] == 1 { mean_shift[j] } else { 0.0 };
        }
    }
    (x, y)
}

fn random_problem(n: usize, d: usize, seed: u64) -> (DMatrix<f64>, Vec<u8>) {
    let mut g = support::rng(seed);
    let x = DMatrix::from_fn(n, d, |_, _| support::normal(&mut g));
    let y: Vec<u8> = (0..n)
        .map(|i| u8::from(x[(i, 0)] + support::normal(&mut g) > 0.0))
        .collect();
    (x, y)
}

#[test]
fn gradient_matches_central_differences() {
    let (x, y) = random_problem(40, 5, 1);
    let obj = LogisticObjective::new(&x, &y, 0.3);
    let mut g = support::rng(2);
    for _ in 0..20 {
        let w = DVector::from_fn(5, |_, _| support::normal(&mut g));
        let b = support::normal(&mut g);
        let (gw, gb) = obj.gradient(&w, b);
        let h = 1e-5;
        for j in 0..5 {
            let mut wp = w.clone();
            let mut wm = w.clone();
            wp[j] += h;
            wm[j] -= h;
            let fd = (obj.value(&wp, b) - obj.value(&wm, b)) / (2.0 * h);
            assert!(
                (fd - gw[j]).abs() <= 1e-6 * gw[j].abs().max(1e-3),
                "{fd} vs {}",
                gw[j]
            );
        }
        let fd = (obj.value(&w, b + h) - obj.value(&w, b - h)) / (2.0 * h);
        assert!((fd - gb).abs() <= 1e-6 * gb.abs().max(1e-3));
    }
}

#[test]
fn solver_agrees_with_plain_gradient_descent() {
    let (x, y) = random_problem(60, 3, 3);
    let c = 0.5;
    let model = train_logreg(&x, &y, c, &SolverOptions::default()).unwrap();
    assert!(model.convergence.converged);

    // Oracle: fixed-step gradient descent from zero, run to stationarity.
    let obj = LogisticObjective::new(&x, &y, c);
    let mut w = DVector::zeros(3);
    let mut b = 0.0;
    for _ in 0..200_000 {
        let (gw, gb) = obj.gradient(&w, b);
        if gw.amax().max(gb.abs()) < 1e-12 {
            break;
        }
        w -= gw * 0.5;
        b -= 0.5 * gb;
    }
    for j in 0..3 {
        assert!((model.weights.values[j] - w[j]).abs() < 1e-6);
    }
    assert!((model.bias - b).abs() < 1e-6);
}

#[test]
fn recovers_bayes_direction_for_shared_covariance_gaussians() {
    // Σ = L Lᵀ with correlation 0.6; the Bayes-optimal direction is Σ⁻¹ Δμ.
    let chol = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.6, 0.8]);
    let shift = [1.0, 0.2];
    let (x, y) = gaussian_classes(20_000, &shift, &chol, 4);
    let model = train_logreg(&x, &y, 100.0, &SolverOptions::default()).unwrap();
    let sigma = &chol * chol.transpose();
    let bayes = sigma.try_inverse().unwrap() * DVector::from_column_slice(&shift);
    let w = DVector::from_column_slice(&model.weights.values);
    let cos = w.dot(&bayes) / (w.norm() * bayes.norm());
    let angle = cos.clamp(-1.0, 1.0).acos().to_degrees();
    assert!(angle < 5.0, "angle {angle}°");
}

#[test]
fn shuffled_labels_shrink_the_weights() {
    let (x, y) = random_problem(400, 10, 5);
    let mut shuffled = y.clone();
    use rand::seq::SliceRandom;
    shuffled.shuffle(&mut support::rng(6));
    let opts = SolverOptions::default();
    let real = train_logreg(&x, &y, 0.1, &opts).unwrap();
    let fake = train_logreg(&x, &shuffled, 0.1, &opts).unwrap();
    let norm = |m: &pairwhiten::classifier::LinearModel| {
        m.weights.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    };
    assert!(
        norm(&fake) < 0.5 * norm(&real),
        "{} vs {}",
        norm(&fake),
        norm(&real)
    );
}

#[test]
fn heavy_regularization_wins_on_wide_sparse_data() {
    let n = 50;
    let d = 280;
    let mut g = support::rng(7);
    let y: Vec<u8> = (0..n).map(|i| (i % 2) as u8).collect();
    let x = DMatrix::from_fn(n, d, |i, j| {
        let signal = if j < 5 {
            1.5 * (f64::from(y[i]) - 0.5)
        } else {
            0.0
        };
        signal + support::normal(&mut g)
    });
    let r = grid_search_c(
        &x,
        &y,
        &DEFAULT_C_GRID,
        5,
        Metric::RocAuc,
        8,
        &SolverOptions::default(),
    )
    .unwrap();
    assert!(r.selected <= 0.01, "{r:?}");
    // Past the selected value, more freedom never helps on this construction.
    let best = r.candidates.iter().position(|&c| c == r.selected).unwrap();
    for k in best + 1..r.scores.len() {
        assert!(r.scores[k] <= r.scores[best] + 1e-12, "{:?}", r.scores);
    }
}

#[test]
fn predictions_are_probabilities() {
    let (x, y) = random_problem(100, 4, 9);
    let m = train_logreg(&x, &y, 1.0, &SolverOptions::default()).unwrap();
    let p = predict_scores(&m, &x).unwrap();
    assert!(p.iter().all(|&v| (0.0..=1.0).contains(&v)));
    assert!(pairwhiten::metrics::roc_auc(&p, &y).unwrap() > 0.7);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn objective_is_convex_along_segments(seed in 0u64..500, t in 0.0f64..=1.0) {
        let (x, y) = random_problem(30, 4, seed);
        let obj = LogisticObjective::new(&x, &y, 0.2);
        let mut g = support::rng(seed + 1);
        let w1 = DVector::from_fn(4, |_, _| 3.0 * support::normal(&mut g));
        let w2 = DVector::from_fn(4, |_, _| 3.0 * support::normal(&mut g));
        let (b1, b2) = (support::normal(&mut g), support::normal(&mut g));
        let mid = obj.value(&(&w1 * t + &w2 * (1.0 - t)), t * b1 + (1.0 - t) * b2);
        let chord = t * obj.value(&w1, b1) + (1.0 - t) * obj.value(&w2, b2);
        prop_assert!(mid <= chord + 1e-12);
    }

    #[test]
    fn solution_is_stationary(seed in 0u64..500, log_c in -3.0f64..1.0) {
        let (x, y) = random_problem(50, 6, seed);
        let c = 10f64.powf(log_c);
        let opts = SolverOptions::default();
        let m = train_logreg(&x, &y, c, &opts).unwrap();
        prop_assert!(m.convergence.converged);
        let obj = LogisticObjective::new(&x, &y, c);
        let (gw, gb) = obj.gradient(&DVector::from_column_slice(&m.weights.values), m.bias);
        prop_assert!(gw.amax().max(gb.abs()) < opts.tol);
    }
}
