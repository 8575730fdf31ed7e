//! Confound residualization and standardization, fitted on training rows
//! and applied unchanged to held-out rows.

use std::collections::BTreeSet;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::table::{CovariateValues, FeatureTable};

/// Which covariates to regress out of the features, and which to keep.
///
/// Protected columns enter the regression so that confound coefficients do
/// not absorb their variance, but their contribution is left in the
/// residuals. The label column may be protected.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConfoundSpec {
    pub continuous: Vec<String>,
    pub categorical: Vec<String>,
    pub protected: Vec<String>,
}

impl ConfoundSpec {
    pub fn validate(&self, table: &FeatureTable) -> Result<()> {
        let mut seen = BTreeSet::new();
        for name in self
            .continuous
            .iter()
            .chain(&self.categorical)
            .chain(&self.protected)
        {
            if !seen.insert(name) {
                return Err(Error::Config(format!(
                    "column `{name}` is listed more than once in the confound specification"
                )));
            }
        }
        for name in self.continuous.iter().chain(&self.protected) {
            if table.numeric_column(name).is_none() {
                return Err(Error::Config(format!(
                    "`{name}` is not a numeric column of the table"
                )));
            }
        }
        for name in &self.categorical {
            if table.covariate(name).is_none() {
                return Err(Error::Config(format!(
                    "`{name}` is not a column of the table"
                )));
            }
        }
        Ok(())
    }

    /// Every covariate name the table must carry, label excluded.
    pub fn covariate_names(&self) -> impl Iterator<Item = &String> {
        self.continuous
            .iter()
            .chain(&self.categorical)
            .chain(&self.protected)
    }
}

fn level_strings(table: &FeatureTable, name: &str) -> Result<Vec<String>> {
    match table.covariate(name).map(|c| &c.values) {
        Some(CovariateValues::Categorical(v)) => Ok(v.clone()),
        Some(CovariateValues::Numeric(v)) => Ok(v.iter().map(|x| x.to_string()).collect()),
        None => Err(Error::Config(format!(
            "`{name}` is not a column of the table"
        ))),
    }
}

fn numeric(table: &FeatureTable, name: &str) -> Result<Vec<f64>> {
    table
        .numeric_column(name)
        .ok_or_else(|| Error::Config(format!("`{name}` is not a numeric column of the table")))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CategoricalCoding {
    column: String,
    /// Sorted levels; the first is the reference and gets no indicator.
    levels: Vec<String>,
}

/// Ordinary-least-squares confound model fitted on training rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedResidualizer {
    continuous: Vec<String>,
    categorical: Vec<CategoricalCoding>,
    protected: Vec<String>,
    protected_means: Vec<f64>,
    /// Names of the removed design columns (intercept, continuous, indicators).
    design_columns: Vec<String>,
    /// One row per removed design column, one column per feature.
    coefficients: DMatrix<f64>,
    protected_coefficients: DMatrix<f64>,
    n_train: usize,
}

impl FittedResidualizer {
    pub fn fit(train: &FeatureTable, spec: &ConfoundSpec) -> Result<Self> {
        spec.validate(train)?;
        let n = train.n_rows();

        let categorical = spec
            .categorical
            .iter()
            .map(|c| {
                let levels: BTreeSet<String> = level_strings(train, c)?.into_iter().collect();
                Ok(CategoricalCoding {
                    column: c.clone(),
                    levels: levels.into_iter().collect(),
                })
            })
            .collect::<Result<Vec<_>>>()?;

        let mut design_columns = vec!["(intercept)".to_string()];
        design_columns.extend(spec.continuous.iter().cloned());
        for coding in &categorical {
            design_columns.extend(
                coding.levels[1..]
                    .iter()
                    .map(|l| format!("{}={l}", coding.column)),
            );
        }
        let mut protected_cols = Vec::with_capacity(spec.protected.len());
        let mut protected_means = Vec::with_capacity(spec.protected.len());
        for name in &spec.protected {
            let v = numeric(train, name)?;
            let mean = v.iter().sum::<f64>() / n as f64;
            protected_cols.push(v.into_iter().map(|x| x - mean).collect::<Vec<_>>());
            protected_means.push(mean);
        }

        let removed = design_columns.len();
        let p = removed + protected_cols.len();
        if n <= p {
            return Err(Error::TooFewRows {
                needed: p + 1,
                found: n,
            });
        }

        let mut fitted = Self {
            continuous: spec.continuous.clone(),
            categorical,
            protected: spec.protected.clone(),
            protected_means,
            design_columns,
            coefficients: DMatrix::zeros(0, 0),
            protected_coefficients: DMatrix::zeros(0, 0),
            n_train: n,
        };
        let removed_design = fitted.removed_design(train)?;
        let mut design = DMatrix::zeros(n, p);
        design.columns_mut(0, removed).copy_from(&removed_design);
        for (k, col) in protected_cols.iter().enumerate() {
            design.column_mut(removed + k).copy_from_slice(col);
        }

        let mut all_names = fitted.design_columns.clone();
        all_names.extend(spec.protected.iter().cloned());
        let beta = least_squares(&design, train.features(), &all_names)?;
        fitted.coefficients = beta.rows(0, removed).into_owned();
        fitted.protected_coefficients = beta.rows(removed, p - removed).into_owned();
        Ok(fitted)
    }

    fn removed_design(&self, table: &FeatureTable) -> Result<DMatrix<f64>> {
        let n = table.n_rows();
        let mut design = DMatrix::zeros(n, self.design_columns.len());
        design.column_mut(0).fill(1.0);
        let mut col = 1;
        for name in &self.continuous {
            design
                .column_mut(col)
                .copy_from_slice(&numeric(table, name)?);
            col += 1;
        }
        for coding in &self.categorical {
            let values = level_strings(table, &coding.column)?;
            for (i, v) in values.iter().enumerate() {
                match coding.levels.binary_search(v) {
                    Ok(0) => {}
                    Ok(k) => design[(i, col + k - 1)] = 1.0,
                    Err(_) => {
                        return Err(Error::UnseenLevel {
                            column: coding.column.clone(),
                            level: v.clone(),
                        })
                    }
                }
            }
            col += coding.levels.len() - 1;
        }
        Ok(design)
    }

    /// Features with the fitted confound contribution removed.
    pub fn apply(&self, table: &FeatureTable) -> Result<DMatrix<f64>> {
        if table.n_features() != self.coefficients.ncols() {
            return Err(Error::Shape {
                expected: format!("{} features", self.coefficients.ncols()),
                found: table.n_features().to_string(),
            });
        }
        let design = self.removed_design(table)?;
        Ok(table.features() - design * &self.coefficients)
    }

    pub fn design_columns(&self) -> &[String] {
        &self.design_columns
    }

    pub fn coefficients(&self) -> &DMatrix<f64> {
        &self.coefficients
    }

    pub fn protected_coefficients(&self) -> &DMatrix<f64> {
        &self.protected_coefficients
    }

    pub fn n_train(&self) -> usize {
        self.n_train
    }
}

/// Solves `min ‖D B − Y‖` column-wise through a thin QR factorization,
/// rejecting rank-deficient designs.
fn least_squares(
    design: &DMatrix<f64>,
    y: &DMatrix<f64>,
    names: &[String],
) -> Result<DMatrix<f64>> {
    let p = design.ncols();
    let qr = design.clone().qr();
    let r = qr.r();
    for j in 0..p {
        let scale = design.column(j).norm().max(f64::MIN_POSITIVE);
        if r[(j, j)].abs() <= 1e-10 * scale {
            return Err(Error::RankDeficient(collinear_group(design, j, names)));
        }
    }
    let qty = qr.q().transpose() * y;
    Ok(r.solve_upper_triangular(&qty)
        .expect("diagonal checked non-zero"))
}

/// Column `j` together with the earlier columns it is a combination of.
fn collinear_group(design: &DMatrix<f64>, j: usize, names: &[String]) -> Vec<String> {
    let mut group = Vec::new();
    if j > 0 {
        let earlier = design.columns(0, j).into_owned();
        let target = design.column(j).into_owned();
        if let Ok(coef) = earlier.clone().svd(true, true).solve(&target, 1e-12) {
            group.extend(
                coef.iter()
                    .enumerate()
                    .filter(|(_, c)| c.abs() > 1e-8)
                    .map(|(k, _)| names[k].clone()),
            );
        }
    }
    group.push(names[j].clone());
    group
}

/// Per-column mean and population standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedScaler {
    means: Vec<f64>,
    stds: Vec<f64>,
}

impl FittedScaler {
    /// `names` labels the columns for error messages.
    pub fn fit(train: &DMatrix<f64>, names: &[String]) -> Result<Self> {
        let n = train.nrows();
        if n == 0 {
            return Err(Error::TooFewRows {
                needed: 1,
                found: 0,
            });
        }
        let mut means = Vec::with_capacity(train.ncols());
        let mut stds = Vec::with_capacity(train.ncols());
        for (j, col) in train.column_iter().enumerate() {
            let (mean, std) = mean_std(col.as_slice());
            if std.is_nan() || std <= 1e-12 * mean.abs().max(1.0) {
                return Err(Error::ConstantColumn(
                    names.get(j).cloned().unwrap_or_else(|| format!("#{j}")),
                ));
            }
            means.push(mean);
            stds.push(std);
        }
        Ok(Self { means, stds })
    }

    pub fn transform(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if x.ncols() != self.means.len() {
            return Err(Error::Shape {
                expected: format!("{} columns", self.means.len()),
                found: x.ncols().to_string(),
            });
        }
        let mut out = x.clone();
        for (j, mut col) in out.column_iter_mut().enumerate() {
            let (m, s) = (self.means[j], self.stds[j]);
            col.apply(|v| *v = (*v - m) / s);
        }
        Ok(out)
    }

    pub fn means(&self) -> &[f64] {
        &self.means
    }

    pub fn stds(&self) -> &[f64] {
        &self.stds
    }
}

/// Mean and population standard deviation (two-pass).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}
