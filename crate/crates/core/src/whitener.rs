//! Multi-stage pairwise whitening.
//!
//! Each stage rescales the two members of every declared pair to unit
//! variance and mixes them with a symmetric 2×2 ZCA-cor block, leaving all
//! other columns untouched. For a row vector `x` the stage computes
//! `z = x D⁻¹ W`, where `D` holds the member standard deviations measured on
//! the stage input. Stages are fitted sequentially: stage `k + 1` measures its
//! correlations on the output of stage `k`.
//!
//! A linear score on whitened inputs, `z · β`, equals `x · θ` with
//! `θ = M₁ M₂ ⋯ M_k β` and `M = D⁻¹ W` per stage. For a single stage on
//! standardized inputs (`D = I`) this is `θ = Wᵀ β = W β`.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::manifest::PairManifest;
use crate::spectral::{zca_cor_matrix, PairCorrelation, WhiteningMatrix2x2, DEFAULT_EIGEN_FLOOR};

/// Tolerance on column means and variances accepted as "standardized".
pub const STANDARDIZED_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WeightSpace {
    Whitened,
    Feature,
}

impl WeightSpace {
    fn name(self) -> &'static str {
        match self {
            WeightSpace::Whitened => "whitened",
            WeightSpace::Feature => "feature",
        }
    }
}

/// Linear-model weights tagged with the coordinate system they live in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightVector {
    pub values: Vec<f64>,
    pub space: WeightSpace,
}

impl WeightVector {
    pub fn whitened(values: Vec<f64>) -> Self {
        Self {
            values,
            space: WeightSpace::Whitened,
        }
    }

    pub fn feature(values: Vec<f64>) -> Self {
        Self {
            values,
            space: WeightSpace::Feature,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// One fitted 2×2 block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairBlock {
    pub first: usize,
    pub second: usize,
    /// Correlation of the pair measured on the stage input.
    pub correlation: f64,
    /// Population standard deviations of the members on the stage input.
    pub input_scale: [f64; 2],
    /// The regularized ZCA-cor block.
    pub matrix: WhiteningMatrix2x2,
    /// Whether the eigenvalue floor was applied.
    pub floored: bool,
}

impl PairBlock {
    /// `M v` with `M = D⁻¹ W`.
    #[inline]
    fn project(&self, v1: f64, v2: f64) -> (f64, f64) {
        let (a, b) = self.matrix.apply(v1, v2);
        (a / self.input_scale[0], b / self.input_scale[1])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedStage {
    pub label: String,
    pub alpha: f64,
    pub blocks: Vec<PairBlock>,
}

impl FittedStage {
    fn apply_in_place(&self, x: &mut DMatrix<f64>) {
        let n = x.nrows();
        for block in &self.blocks {
            let mut a = x.column(block.first).clone_owned();
            let mut b = x.column(block.second).clone_owned();
            let (s1, s2) = (block.input_scale[0], block.input_scale[1]);
            for i in 0..n {
                let (u, v) = block.matrix.apply(a[i] / s1, b[i] / s2);
                a[i] = u;
                b[i] = v;
            }
            x.set_column(block.first, &a);
            x.set_column(block.second, &b);
        }
    }
}

/// Per-pair sign comparison produced by
/// [`FittedWhitener::check_order_preservation`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairOrder {
    pub first: usize,
    pub second: usize,
    pub beta_diff: f64,
    pub theta_diff: f64,
    pub preserved: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedWhitener {
    n_features: usize,
    eigen_floor: f64,
    stages: Vec<FittedStage>,
}

impl FittedWhitener {
    pub fn identity(n_features: usize) -> Self {
        Self {
            n_features,
            eigen_floor: DEFAULT_EIGEN_FLOOR,
            stages: Vec::new(),
        }
    }

    pub fn fit(train: &DMatrix<f64>, manifest: &PairManifest) -> Result<Self> {
        Self::fit_with_floor(train, manifest, DEFAULT_EIGEN_FLOOR)
    }

    pub fn fit_with_floor(train: &DMatrix<f64>, manifest: &PairManifest, eps: f64) -> Result<Self> {
        let (n, d) = train.shape();
        if d != manifest.n_features() {
            return Err(Error::Shape {
                expected: format!("{} columns", manifest.n_features()),
                found: d.to_string(),
            });
        }
        if n < 3 {
            return Err(Error::TooFewRows {
                needed: 3,
                found: n,
            });
        }
        for (j, col) in train.column_iter().enumerate() {
            let (m, s) = crate::preprocess::mean_std(col.as_slice());
            if m.abs() > STANDARDIZED_TOLERANCE || (s * s - 1.0).abs() > STANDARDIZED_TOLERANCE {
                return Err(Error::NotStandardized(format!(
                    "column {j} has mean {m:.3e} and variance {:.6}",
                    s * s
                )));
            }
        }

        let mut current = train.clone();
        let mut stages = Vec::with_capacity(manifest.stages().len());
        for stage in manifest.stages() {
            let blocks = stage
                .pairs
                .par_iter()
                .map(|(a, b)| {
                    let (r, s1, s2) = pair_stats(
                        current.column(a.index).as_slice(),
                        current.column(b.index).as_slice(),
                    );
                    if s1 == 0.0 || s2 == 0.0 {
                        let name = if s1 == 0.0 { &a.name } else { &b.name };
                        return Err(Error::ConstantColumn(name.clone()));
                    }
                    let zca = zca_cor_matrix(PairCorrelation::from_estimate(r)?, eps);
                    Ok(PairBlock {
                        first: a.index,
                        second: b.index,
                        correlation: r,
                        input_scale: [s1, s2],
                        matrix: zca.matrix.regularized(stage.alpha)?,
                        floored: zca.floored,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let fitted = FittedStage {
                label: stage.label.clone(),
                alpha: stage.alpha,
                blocks,
            };
            fitted.apply_in_place(&mut current);
            stages.push(fitted);
        }
        Ok(Self {
            n_features: d,
            eigen_floor: eps,
            stages,
        })
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn stages(&self) -> &[FittedStage] {
        &self.stages
    }

    pub fn eigen_floor(&self) -> f64 {
        self.eigen_floor
    }

    /// True when no stage declares any pair.
    pub fn is_identity(&self) -> bool {
        self.stages.iter().all(|s| s.blocks.is_empty())
    }

    fn check_columns(&self, d: usize) -> Result<()> {
        if d != self.n_features {
            return Err(Error::Shape {
                expected: format!("{} columns", self.n_features),
                found: d.to_string(),
            });
        }
        Ok(())
    }

    /// Applies every stage, in fitted order, to the rows of `x`.
    pub fn transform(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check_columns(x.ncols())?;
        let mut out = x.clone();
        for stage in &self.stages {
            stage.apply_in_place(&mut out);
        }
        Ok(out)
    }

    /// The output after each stage, in order.
    pub fn transform_stages(&self, x: &DMatrix<f64>) -> Result<Vec<DMatrix<f64>>> {
        self.check_columns(x.ncols())?;
        let mut current = x.clone();
        let mut outputs = Vec::with_capacity(self.stages.len());
        for stage in &self.stages {
            stage.apply_in_place(&mut current);
            outputs.push(current.clone());
        }
        Ok(outputs)
    }

    /// Maps whitened-space weights to feature space so that
    /// `x · θ == transform(x) · β` for every row `x`.
    pub fn project_weights(&self, beta: &WeightVector) -> Result<WeightVector> {
        if beta.space != WeightSpace::Whitened {
            return Err(Error::WrongSpace {
                expected: WeightSpace::Whitened.name(),
                found: beta.space.name(),
            });
        }
        self.check_columns(beta.len())?;
        let mut theta = beta.values.clone();
        for stage in self.stages.iter().rev() {
            for block in &stage.blocks {
                let (u, v) = block.project(theta[block.first], theta[block.second]);
                theta[block.first] = u;
                theta[block.second] = v;
            }
        }
        Ok(WeightVector::feature(theta))
    }

    /// For each pair of `stage`, compares the order of `β` with the order of
    /// `W β` under that stage's symmetric ZCA-cor block alone.
    pub fn check_order_preservation(&self, stage: usize, beta: &WeightVector) -> Vec<PairOrder> {
        let Some(stage) = self.stages.get(stage) else {
            return Vec::new();
        };
        stage
            .blocks
            .iter()
            .map(|block| {
                let (b1, b2) = (beta.values[block.first], beta.values[block.second]);
                let (t1, t2) = block.matrix.apply(b1, b2);
                order_of(block.first, block.second, b1 - b2, t1 - t2)
            })
            .collect()
    }

    /// The d×d matrix `M` of one stage, acting on row vectors (`z = x M`).
    pub fn stage_matrix(&self, stage: usize) -> DMatrix<f64> {
        let mut m = DMatrix::identity(self.n_features, self.n_features);
        for block in &self.stages[stage].blocks {
            let w = block.matrix.to_array();
            let (i, j) = (block.first, block.second);
            let s = block.input_scale;
            m[(i, i)] = w[0][0] / s[0];
            m[(i, j)] = w[0][1] / s[0];
            m[(j, i)] = w[1][0] / s[1];
            m[(j, j)] = w[1][1] / s[1];
        }
        m
    }

    /// The full operator `M₁ M₂ ⋯ M_k` as a dense matrix, obtained by pushing
    /// the identity through [`transform`](Self::transform). Intended for
    /// small `d`.
    pub fn dense_operator(&self) -> DMatrix<f64> {
        self.transform(&DMatrix::identity(self.n_features, self.n_features))
            .expect("identity has matching width")
    }
}

/// `(r, σ₁, σ₂)` with population standard deviations.
pub fn pair_stats(a: &[f64], b: &[f64]) -> (f64, f64, f64) {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0);
    for (&x, &y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        saa += dx * dx;
        sbb += dy * dy;
        sab += dx * dy;
    }
    let r = if saa > 0.0 && sbb > 0.0 {
        sab / (saa * sbb).sqrt()
    } else {
        0.0
    };
    (r, (saa / n).sqrt(), (sbb / n).sqrt())
}

/// Sample correlation of two columns.
pub fn column_correlation(x: &DMatrix<f64>, i: usize, j: usize) -> f64 {
    pair_stats(x.column(i).as_slice(), x.column(j).as_slice()).0
}

fn order_of(first: usize, second: usize, beta_diff: f64, theta_diff: f64) -> PairOrder {
    let sign = |v: f64| {
        if v > 0.0 {
            1
        } else if v < 0.0 {
            -1
        } else {
            0
        }
    };
    PairOrder {
        first,
        second,
        beta_diff,
        theta_diff,
        preserved: sign(beta_diff) == sign(theta_diff),
    }
}

/// Decision score `x · w` for each row.
pub fn linear_scores(x: &DMatrix<f64>, weights: &[f64]) -> DVector<f64> {
    x * DVector::from_column_slice(weights)
}
