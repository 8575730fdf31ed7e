//! Independent oracles and fixtures shared by the integration tests.
#![allow(dead_code)]

use nalgebra::DMatrix;
use pairwhiten::table::{Covariate, CovariateValues, FeatureTable};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Cyclic Jacobi eigendecomposition of a symmetric matrix. Returns the
/// eigenvalues and the eigenvectors as columns.
pub fn jacobi_eigen(a: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let n = a.nrows();
    let mut a = a.clone();
    let mut v = DMatrix::<f64>::identity(n, n);
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[(i, j)] * a[(i, j)])
            .sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                if a[(p, q)].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * a[(p, q)]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                let mut rot = DMatrix::<f64>::identity(n, n);
                rot[(p, p)] = c;
                rot[(q, q)] = c;
                rot[(p, q)] = s;
                rot[(q, p)] = -s;
                a = rot.transpose() * &a * &rot;
                v = &v * &rot;
            }
        }
    }
    ((0..n).map(|i| a[(i, i)]).collect(), v)
}

/// `R^{-1/2}` through the Jacobi oracle.
pub fn inverse_sqrt(r: &DMatrix<f64>) -> DMatrix<f64> {
    let (vals, vecs) = jacobi_eigen(r);
    let d = DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
        vals.len(),
        vals.iter().map(|l| l.sqrt().recip()),
    ));
    &vecs * d * vecs.transpose()
}

/// Fraction of positive-negative pairs ranked correctly, ties counting half.
pub fn brute_force_auc(scores: &[f64], labels: &[u8]) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for (i, &si) in scores.iter().enumerate() {
        for (j, &sj) in scores.iter().enumerate() {
            if labels[i] == 1 && labels[j] == 0 {
                den += 1.0;
                if si > sj {
                    num += 1.0;
                } else if si == sj {
                    num += 0.5;
                }
            }
        }
    }
    num / den
}

/// Trapezoidal area under the empirical ROC curve, thresholds swept from
/// the highest score down with tied scores entering together.
pub fn trapezoid_auc(scores: &[f64], labels: &[u8]) -> f64 {
    let p = labels.iter().filter(|&&l| l == 1).count() as f64;
    let n = labels.len() as f64 - p;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let (mut tp, mut fp) = (0.0, 0.0);
    let (mut prev_tpr, mut prev_fpr) = (0.0, 0.0);
    let mut area = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            if labels[order[j]] == 1 {
                tp += 1.0;
            } else {
                fp += 1.0;
            }
            j += 1;
        }
        let (tpr, fpr) = (tp / p, fp / n);
        area += (fpr - prev_fpr) * (tpr + prev_tpr) / 2.0;
        prev_tpr = tpr;
        prev_fpr = fpr;
        i = j;
    }
    area
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// Columns shifted to zero mean and scaled to unit population variance.
pub fn standardize(x: &DMatrix<f64>) -> DMatrix<f64> {
    let n = x.nrows() as f64;
    let mut out = x.clone();
    for mut col in out.column_iter_mut() {
        let m = col.sum() / n;
        col.add_scalar_mut(-m);
        let s = (col.norm_squared() / n).sqrt();
        col /= s;
    }
    out
}

/// `n × 2m` standardized matrix whose column pairs `(2k, 2k+1)` have
/// population correlation near `r[k]`.
pub fn correlated_pairs(n: usize, r: &[f64], seed: u64) -> DMatrix<f64> {
    let mut g = rng(seed);
    let mut x = DMatrix::zeros(n, 2 * r.len());
    for i in 0..n {
        for (k, &rk) in r.iter().enumerate() {
            let a = normal(&mut g);
            let b = normal(&mut g);
            x[(i, 2 * k)] = a;
            x[(i, 2 * k + 1)] = rk * a + (1.0 - rk * rk).sqrt() * b;
        }
    }
    standardize(&x)
}

/// Small table with numbered features, an `age` and a `site` covariate and
/// balanced labels that shift the first feature.
pub fn small_table(n: usize, d: usize, seed: u64) -> FeatureTable {
    let mut g = rng(seed);
    let labels: Vec<u8> = (0..n).map(|i| (i % 2) as u8).collect();
    let ages: Vec<f64> = (0..n).map(|_| 40.0 + 10.0 * normal(&mut g)).collect();
    let sites: Vec<String> = (0..n).map(|i| format!("s{}", i % 3)).collect();
    let x = DMatrix::from_fn(n, d, |i, j| {
        let shift = if j == 0 {
            0.8 * f64::from(labels[i])
        } else {
            0.0
        };
        shift + 0.02 * (ages[i] - 40.0) + normal(&mut g)
    });
    let names = (0..d).map(|j| format!("f{j}")).collect();
    FeatureTable::new(
        names,
        x,
        vec![
            Covariate {
                name: "age".into(),
                values: CovariateValues::Numeric(ages),
            },
            Covariate {
                name: "site".into(),
                values: CovariateValues::Categorical(sites),
            },
        ],
        "dx",
        labels,
    )
    .unwrap()
}

pub fn max_abs_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).abs().max()
}
