//! L2-regularized binary logistic regression.
//!
//! The objective is the mean logistic loss plus `‖w‖² / (2 C n)`, with the
//! bias left unpenalized. It is minimized from zero by a truncated Newton
//! method: each step solves the Newton system with preconditioned conjugate
//! gradients using Hessian-vector products only, then backtracks along the
//! resulting direction. Iteration stops once the largest gradient component
//! falls below the tolerance.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cv::stratified_kfold;
use crate::error::{Error, Result};
use crate::metrics::{balanced_accuracy, roc_auc};
use crate::whitener::{WeightSpace, WeightVector};

/// Inverse regularization strengths searched by default.
pub const DEFAULT_C_GRID: [f64; 5] = [0.001, 0.01, 0.1, 1.0, 10.0];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    /// Stop when `max |∇| < tol`.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 500,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Convergence {
    pub converged: bool,
    pub iterations: usize,
    pub gradient_max_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub weights: WeightVector,
    pub bias: f64,
    /// Inverse regularization strength the model was trained with.
    pub c: f64,
    pub convergence: Convergence,
}

impl LinearModel {
    /// `x · w + b` per row.
    pub fn decision_function(&self, x: &DMatrix<f64>) -> Result<DVector<f64>> {
        if x.ncols() != self.weights.len() {
            return Err(Error::Shape {
                expected: format!("{} columns", self.weights.len()),
                found: x.ncols().to_string(),
            });
        }
        let w = DVector::from_column_slice(&self.weights.values);
        Ok((x * w).add_scalar(self.bias))
    }

    pub fn space(&self) -> WeightSpace {
        self.weights.space
    }

    /// Re-tags the weights; used when the training inputs were whitened.
    pub fn in_space(mut self, space: WeightSpace) -> Self {
        self.weights.space = space;
        self
    }
}

/// Probability of the positive class for each row.
pub fn predict_scores(model: &LinearModel, x: &DMatrix<f64>) -> Result<Vec<f64>> {
    Ok(model
        .decision_function(x)?
        .iter()
        .map(|&s| sigmoid(s))
        .collect())
}

#[inline]
pub fn sigmoid(s: f64) -> f64 {
    if s >= 0.0 {
        1.0 / (1.0 + (-s).exp())
    } else {
        let e = s.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + eˢ)` without overflow.
#[inline]
fn softplus(s: f64) -> f64 {
    s.max(0.0) + (-s.abs()).exp().ln_1p()
}

/// The regularized objective and its derivatives for fixed data.
pub struct LogisticObjective<'a> {
    x: &'a DMatrix<f64>,
    y: DVector<f64>,
    /// `1 / (C n)`.
    ridge: f64,
    inv_n: f64,
}

impl<'a> LogisticObjective<'a> {
    pub fn new(x: &'a DMatrix<f64>, y: &[u8], c: f64) -> Self {
        let n = x.nrows() as f64;
        Self {
            x,
            y: DVector::from_iterator(y.len(), y.iter().map(|&v| f64::from(v))),
            ridge: 1.0 / (c * n),
            inv_n: 1.0 / n,
        }
    }

    fn scores(&self, w: &DVector<f64>, b: f64, out: &mut DVector<f64>) {
        out.gemv(1.0, self.x, w, 0.0);
        out.add_scalar_mut(b);
    }

    /// Objective value at `(w, b)`.
    pub fn value(&self, w: &DVector<f64>, b: f64) -> f64 {
        let mut s = DVector::zeros(self.x.nrows());
        self.scores(w, b, &mut s);
        self.value_from_scores(w, &s)
    }

    fn value_from_scores(&self, w: &DVector<f64>, s: &DVector<f64>) -> f64 {
        let loss: f64 = s
            .iter()
            .zip(self.y.iter())
            .map(|(&s, &y)| softplus(s) - y * s)
            .sum();
        loss * self.inv_n + 0.5 * self.ridge * w.norm_squared()
    }

    /// Gradient with respect to `(w, b)`.
    pub fn gradient(&self, w: &DVector<f64>, b: f64) -> (DVector<f64>, f64) {
        let mut s = DVector::zeros(self.x.nrows());
        self.scores(w, b, &mut s);
        let resid = s.zip_map(&self.y, |s, y| sigmoid(s) - y);
        self.gradient_from_residual(w, &resid)
    }

    fn gradient_from_residual(
        &self,
        w: &DVector<f64>,
        resid: &DVector<f64>,
    ) -> (DVector<f64>, f64) {
        let mut gw = w * self.ridge;
        gw.gemv_tr(self.inv_n, self.x, resid, 1.0);
        (gw, resid.sum() * self.inv_n)
    }
}

/// Scratch buffers for Hessian-vector products at a fixed point.
struct Curvature<'o, 'a> {
    obj: &'o LogisticObjective<'a>,
    /// `p (1 − p)` per row.
    weights: DVector<f64>,
    xv: DVector<f64>,
}

impl Curvature<'_, '_> {
    fn apply(&mut self, vw: &DVector<f64>, vb: f64, out_w: &mut DVector<f64>) -> f64 {
        let obj = self.obj;
        self.xv.gemv(1.0, obj.x, vw, 0.0);
        self.xv.add_scalar_mut(vb);
        self.xv.component_mul_assign(&self.weights);
        out_w.copy_from(vw);
        out_w.gemv_tr(obj.inv_n, obj.x, &self.xv, obj.ridge);
        self.xv.sum() * obj.inv_n
    }
}

/// Fits the model. Non-convergence is reported in [`LinearModel::convergence`]
/// rather than as an error. The weights are tagged as living in the space of
/// `x`'s columns ([`WeightSpace::Feature`]); see [`LinearModel::in_space`].
pub fn train_logreg(
    x: &DMatrix<f64>,
    y: &[u8],
    c: f64,
    opts: &SolverOptions,
) -> Result<LinearModel> {
    let (n, d) = x.shape();
    if y.len() != n {
        return Err(Error::Shape {
            expected: format!("{n} labels"),
            found: y.len().to_string(),
        });
    }
    if !(c > 0.0 && c.is_finite()) {
        return Err(Error::Config(format!(
            "C = {c} must be positive and finite"
        )));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("training matrix".into()));
    }
    let positives = y.iter().filter(|&&v| v == 1).count();
    if positives == 0 || positives == n || y.iter().any(|&v| v > 1) {
        return Err(Error::SingleClass);
    }

    let obj = LogisticObjective::new(x, y, c);
    let mut w = DVector::zeros(d);
    let mut b = 0.0;
    let mut s = DVector::zeros(n);
    let mut trial = DVector::zeros(n);
    let mut curv = Curvature {
        obj: &obj,
        weights: DVector::zeros(n),
        xv: DVector::zeros(n),
    };
    // CG workspace.
    let mut dw = DVector::zeros(d);
    let mut rw = DVector::zeros(d);
    let mut zw = DVector::zeros(d);
    let mut pw = DVector::zeros(d);
    let mut hw = DVector::zeros(d);
    let mut precond = DVector::zeros(d);

    let mut iterations = 0;
    let mut gmax;
    obj.scores(&w, b, &mut s);
    let mut f = obj.value_from_scores(&w, &s);
    loop {
        let p = s.map(sigmoid);
        let resid = &p - &obj.y;
        let (gw, gb) = obj.gradient_from_residual(&w, &resid);
        gmax = gw.amax().max(gb.abs());
        if gmax < opts.tol || iterations >= opts.max_iter {
            break;
        }
        iterations += 1;

        curv.weights = p.map(|p| p * (1.0 - p));
        // Jacobi preconditioner: diagonal of the Hessian.
        for (j, col) in x.column_iter().enumerate() {
            precond[j] = obj.inv_n * col.dot(&col.component_mul(&curv.weights)) + obj.ridge;
        }
        let precond_b = (curv.weights.sum() * obj.inv_n).max(1e-300);

        // Solve H d = −g by preconditioned CG.
        let gnorm = (gw.norm_squared() + gb * gb).sqrt();
        let target = gnorm * gnorm.sqrt().min(0.5);
        dw.fill(0.0);
        let mut db = 0.0;
        rw.copy_from(&gw);
        rw.neg_mut();
        let mut rb = -gb;
        zw.copy_from(&rw);
        zw.component_div_assign(&precond);
        let mut zb = rb / precond_b;
        pw.copy_from(&zw);
        let mut pb = zb;
        let mut rz = rw.dot(&zw) + rb * zb;
        for _ in 0..(2 * (d + 1)).max(20) {
            let hb = curv.apply(&pw, pb, &mut hw);
            let curvature = pw.dot(&hw) + pb * hb;
            if curvature <= 0.0 {
                break;
            }
            let step = rz / curvature;
            dw.axpy(step, &pw, 1.0);
            db += step * pb;
            rw.axpy(-step, &hw, 1.0);
            rb -= step * hb;
            if (rw.norm_squared() + rb * rb).sqrt() <= target {
                break;
            }
            zw.copy_from(&rw);
            zw.component_div_assign(&precond);
            zb = rb / precond_b;
            let rz_next = rw.dot(&zw) + rb * zb;
            let ratio = rz_next / rz;
            rz = rz_next;
            pw.axpy(1.0, &zw, ratio);
            pb = zb + ratio * pb;
        }

        // Armijo backtracking.
        let slope = gw.dot(&dw) + gb * db;
        if slope.is_nan() || slope >= 0.0 {
            break;
        }
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let wt = &w + &dw * t;
            let bt = b + db * t;
            obj.scores(&wt, bt, &mut trial);
            let ft = obj.value_from_scores(&wt, &trial);
            if ft <= f + 1e-4 * t * slope {
                w = wt;
                b = bt;
                f = ft;
                std::mem::swap(&mut s, &mut trial);
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            break;
        }
    }

    Ok(LinearModel {
        weights: WeightVector::feature(w.as_slice().to_vec()),
        bias: b,
        c,
        convergence: Convergence {
            converged: gmax < opts.tol,
            iterations,
            gradient_max_norm: gmax,
        },
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    RocAuc,
    BalancedAccuracy,
}

impl Metric {
    pub fn name(self) -> &'static str {
        match self {
            Metric::RocAuc => "roc_auc",
            Metric::BalancedAccuracy => "balanced_accuracy",
        }
    }

    pub fn score(self, probabilities: &[f64], labels: &[u8]) -> Result<f64> {
        match self {
            Metric::RocAuc => roc_auc(probabilities, labels),
            Metric::BalancedAccuracy => balanced_accuracy(probabilities, labels, 0.5),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSearchResult {
    pub candidates: Vec<f64>,
    /// Mean inner-validation score per candidate; empty when the grid has a
    /// single entry and nothing was compared.
    pub scores: Vec<f64>,
    pub selected: f64,
}

pub fn validate_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::Config("the C grid is empty".into()));
    }
    if let Some((k, bad)) = grid
        .iter()
        .enumerate()
        .find(|(_, c)| !(**c > 0.0 && c.is_finite()))
    {
        return Err(Error::Config(format!(
            "C grid entry {} is {bad}; inverse regularization strengths must be positive",
            k + 1
        )));
    }
    Ok(())
}

/// Picks the C with the best mean inner-fold score. Ties go to the smaller C.
pub fn grid_search_c(
    x: &DMatrix<f64>,
    y: &[u8],
    grid: &[f64],
    folds: usize,
    scorer: Metric,
    seed: u64,
    opts: &SolverOptions,
) -> Result<GridSearchResult> {
    validate_grid(grid)?;
    if folds < 2 {
        return Err(Error::Config(format!(
            "inner fold count {folds} must be at least 2"
        )));
    }
    let mut candidates = grid.to_vec();
    candidates.sort_by(f64::total_cmp);
    candidates.dedup();
    if candidates.len() == 1 {
        return Ok(GridSearchResult {
            selected: candidates[0],
            candidates,
            scores: Vec::new(),
        });
    }

    let assignment = stratified_kfold(y, folds, seed)?;
    let splits: Vec<_> = (0..folds)
        .map(|k| {
            let (train, test) = assignment.split(k);
            let xt = select_rows(x, &train);
            let yt: Vec<u8> = train.iter().map(|&i| y[i]).collect();
            let xv = select_rows(x, &test);
            let yv: Vec<u8> = test.iter().map(|&i| y[i]).collect();
            (xt, yt, xv, yv)
        })
        .collect();

    let scores = candidates
        .par_iter()
        .map(|&c| {
            let mut total = 0.0;
            for (xt, yt, xv, yv) in &splits {
                let model = train_logreg(xt, yt, c, opts)?;
                total += scorer.score(&predict_scores(&model, xv)?, yv)?;
            }
            Ok(total / folds as f64)
        })
        .collect::<Result<Vec<f64>>>()?;

    let mut best = 0;
    for (k, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = k;
        }
    }
    Ok(GridSearchResult {
        selected: candidates[best],
        candidates,
        scores,
    })
}

pub(crate) fn select_rows(x: &DMatrix<f64>, rows: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), x.ncols(), |i, j| x[(rows[i], j)])
}
