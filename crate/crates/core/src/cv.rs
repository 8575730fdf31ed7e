//! Stratified cross-validation of the full residualize → standardize →
//! whiten → rescale → classify pipeline.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classifier::{
    grid_search_c, predict_scores, train_logreg, validate_grid, GridSearchResult, LinearModel,
    Metric, SolverOptions, DEFAULT_C_GRID,
};
use crate::error::{Error, Result};
use crate::manifest::PairManifest;
use crate::metrics::{balanced_accuracy, roc_auc, t_test, PairedTestResult, TTestMode};
use crate::preprocess::{mean_std, ConfoundSpec, FittedResidualizer, FittedScaler};
use crate::table::FeatureTable;
use crate::whitener::{column_correlation, FittedWhitener, WeightSpace, WeightVector};

/// Fold membership of every row.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldAssignment {
    pub fold_of: Vec<usize>,
    pub k: usize,
    pub seed: u64,
}

impl FoldAssignment {
    /// `(train, test)` row indices for fold `fold`, each ascending.
    pub fn split(&self, fold: usize) -> (Vec<usize>, Vec<usize>) {
        let (test, train): (Vec<usize>, Vec<usize>) =
            (0..self.fold_of.len()).partition(|&i| self.fold_of[i] == fold);
        (train, test)
    }

    pub fn fold_size(&self, fold: usize) -> usize {
        self.fold_of.iter().filter(|&&f| f == fold).count()
    }
}

/// Deterministic stratified partition into `k` folds.
///
/// Each class is shuffled with a seeded generator and dealt round-robin,
/// continuing the deal across classes so that fold sizes differ by at most
/// one.
pub fn stratified_kfold(labels: &[u8], k: usize, seed: u64) -> Result<FoldAssignment> {
    if k < 2 {
        return Err(Error::Config(format!("fold count {k} must be at least 2")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fold_of = vec![0; labels.len()];
    let mut offset = 0;
    for class in 0..=1u8 {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        if members.len() < k {
            return Err(Error::ClassTooSmall {
                class,
                count: members.len(),
                folds: k,
            });
        }
        members.shuffle(&mut rng);
        for (pos, &i) in members.iter().enumerate() {
            fold_of[i] = (offset + pos) % k;
        }
        offset += members.len();
    }
    if labels.iter().any(|&l| l > 1) {
        return Err(Error::Table("labels must be 0 or 1".into()));
    }
    Ok(FoldAssignment { fold_of, k, seed })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvConfig {
    pub folds: usize,
    pub inner_folds: usize,
    pub grid: Vec<f64>,
    pub seed: u64,
    pub metric: Metric,
    pub solver: SolverOptions,
}

impl Default for CvConfig {
    fn default() -> Self {
        Self {
            folds: 10,
            inner_folds: 5,
            grid: DEFAULT_C_GRID.to_vec(),
            seed: 0,
            metric: Metric::RocAuc,
            solver: SolverOptions::default(),
        }
    }
}

impl CvConfig {
    pub fn validate(&self) -> Result<()> {
        validate_grid(&self.grid)?;
        if self.folds < 2 || self.inner_folds < 2 {
            return Err(Error::Config("fold counts must be at least 2".into()));
        }
        Ok(())
    }

    fn inner_seed(&self, fold: usize) -> u64 {
        self.seed
            .wrapping_mul(0x9E37_79B9_7F4A_7C15)
            .wrapping_add(fold as u64 + 1)
    }
}

/// Everything fitted on the training rows of one fold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedPipeline {
    pub residualizer: FittedResidualizer,
    pub scaler: FittedScaler,
    pub whitener: Option<FittedWhitener>,
    /// Standardizer fitted on whitened training data.
    pub rescaler: Option<FittedScaler>,
    pub grid: GridSearchResult,
    /// Classifier on the model inputs (whitened space when whitening).
    pub model: LinearModel,
    /// The same classifier expressed on standardized residualized features.
    pub feature_model: LinearModel,
}

impl FittedPipeline {
    /// Fits every stage on `train`. A manifest without pairs behaves exactly
    /// like no manifest.
    pub fn fit(
        train: &FeatureTable,
        manifest: Option<&PairManifest>,
        confounds: &ConfoundSpec,
        cfg: &CvConfig,
        inner_seed: u64,
    ) -> Result<Self> {
        let names = train.feature_names();
        let residualizer = FittedResidualizer::fit(train, confounds)?;
        let resid = residualizer.apply(train)?;
        let scaler = FittedScaler::fit(&resid, names)?;
        let x = scaler.transform(&resid)?;

        let (whitener, rescaler, z) = match manifest.filter(|m| m.pair_count() > 0) {
            Some(m) => {
                let whitener = FittedWhitener::fit(&x, m)?;
                let w = whitener.transform(&x)?;
                let rescaler = FittedScaler::fit(&w, names)?;
                let z = rescaler.transform(&w)?;
                (Some(whitener), Some(rescaler), z)
            }
            None => (None, None, x),
        };

        let y = train.labels();
        let grid = grid_search_c(
            &z,
            y,
            &cfg.grid,
            cfg.inner_folds,
            cfg.metric,
            inner_seed,
            &cfg.solver,
        )?;
        let mut model = train_logreg(&z, y, grid.selected, &cfg.solver)?;
        let feature_model = match (&whitener, &rescaler) {
            (Some(w), Some(s)) => {
                model = model.in_space(WeightSpace::Whitened);
                project_model(w, s, &model)?
            }
            _ => model.clone(),
        };
        Ok(Self {
            residualizer,
            scaler,
            whitener,
            rescaler,
            grid,
            model,
            feature_model,
        })
    }

    /// Residualized, standardized features: the space weights are reported in.
    pub fn feature_inputs(&self, table: &FeatureTable) -> Result<DMatrix<f64>> {
        self.scaler.transform(&self.residualizer.apply(table)?)
    }

    /// What the classifier sees.
    pub fn model_inputs(&self, table: &FeatureTable) -> Result<DMatrix<f64>> {
        let x = self.feature_inputs(table)?;
        match (&self.whitener, &self.rescaler) {
            (Some(w), Some(s)) => s.transform(&w.transform(&x)?),
            _ => Ok(x),
        }
    }

    pub fn predict(&self, table: &FeatureTable) -> Result<Vec<f64>> {
        predict_scores(&self.model, &self.model_inputs(table)?)
    }

    /// Input and output correlations of every declared pair, measured on
    /// `train` (the rows the pipeline was fitted on).
    pub fn pair_diagnostics(&self, train: &FeatureTable) -> Result<Vec<PairDiagnostic>> {
        let Some(whitener) = &self.whitener else {
            return Ok(Vec::new());
        };
        let x = self.feature_inputs(train)?;
        let outputs = whitener.transform_stages(&x)?;
        let last = outputs.last().expect("a whitener with pairs has stages");
        let names = train.feature_names();
        let mut rows = Vec::new();
        for (s, (stage, out)) in whitener.stages().iter().zip(&outputs).enumerate() {
            for block in &stage.blocks {
                let (i, j) = (block.first, block.second);
                rows.push(PairDiagnostic {
                    stage: s + 1,
                    label: stage.label.clone(),
                    alpha: stage.alpha,
                    first: names[i].clone(),
                    second: names[j].clone(),
                    raw_correlation: column_correlation(&x, i, j),
                    stage_input_correlation: block.correlation,
                    stage_output_correlation: column_correlation(out, i, j),
                    final_correlation: column_correlation(last, i, j),
                    floored: block.floored,
                });
            }
        }
        Ok(rows)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairDiagnostic {
    pub stage: usize,
    pub label: String,
    pub alpha: f64,
    pub first: String,
    pub second: String,
    /// On standardized features, before any whitening.
    pub raw_correlation: f64,
    pub stage_input_correlation: f64,
    pub stage_output_correlation: f64,
    /// After all stages.
    pub final_correlation: f64,
    pub floored: bool,
}

/// Expresses a classifier trained on rescaled whitened inputs as one acting
/// on the whitener's inputs. Scores are preserved exactly up to rounding.
pub fn project_model(
    whitener: &FittedWhitener,
    rescaler: &FittedScaler,
    model: &LinearModel,
) -> Result<LinearModel> {
    let beta = &model.weights;
    if beta.len() != rescaler.means().len() {
        return Err(Error::Shape {
            expected: format!("{} weights", rescaler.means().len()),
            found: beta.len().to_string(),
        });
    }
    let mut unscaled = Vec::with_capacity(beta.len());
    let mut bias = model.bias;
    for ((&b, &m), &s) in beta
        .values
        .iter()
        .zip(rescaler.means())
        .zip(rescaler.stds())
    {
        unscaled.push(b / s);
        bias -= b * m / s;
    }
    let theta = whitener.project_weights(&WeightVector {
        values: unscaled,
        space: beta.space,
    })?;
    Ok(LinearModel {
        weights: theta,
        bias,
        c: model.c,
        convergence: model.convergence,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub roc_auc: f64,
    pub balanced_accuracy: f64,
    pub selected_c: f64,
    pub grid: GridSearchResult,
    pub model: LinearModel,
    pub feature_model: LinearModel,
}

impl FoldResult {
    pub fn metric(&self, metric: Metric) -> f64 {
        match metric {
            Metric::RocAuc => self.roc_auc,
            Metric::BalancedAccuracy => self.balanced_accuracy,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineDescriptor {
    pub whitened: bool,
    pub manifest_hash: Option<String>,
    /// `(label, alpha, pair count)` per stage.
    pub stages: Vec<(String, f64, usize)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub pipeline: PipelineDescriptor,
    pub feature_names: Vec<String>,
    pub assignment: FoldAssignment,
    pub folds: Vec<FoldResult>,
    /// Feature-space weight mean across folds.
    pub weight_mean: Vec<f64>,
    /// Feature-space weight population standard deviation across folds.
    pub weight_std: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightRow {
    pub feature: String,
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TopWeights {
    pub rows: Vec<WeightRow>,
    /// Set when more rows were requested than there are features.
    pub clamped_from: Option<usize>,
}

impl CvReport {
    pub fn metric_values(&self, metric: Metric) -> Vec<f64> {
        self.folds.iter().map(|f| f.metric(metric)).collect()
    }

    /// Mean and population standard deviation over folds.
    pub fn metric_summary(&self, metric: Metric) -> (f64, f64) {
        mean_std(&self.metric_values(metric))
    }

    /// The `k` features with the largest absolute mean weight. Ties are
    /// ordered by feature name.
    pub fn top_k_weights(&self, k: usize) -> TopWeights {
        let d = self.feature_names.len();
        let clamped_from = (k > d).then_some(k);
        let mut rows: Vec<WeightRow> = (0..d)
            .map(|j| WeightRow {
                feature: self.feature_names[j].clone(),
                mean: self.weight_mean[j],
                std: self.weight_std[j],
            })
            .collect();
        rows.sort_by(|a, b| {
            b.mean
                .abs()
                .total_cmp(&a.mean.abs())
                .then_with(|| a.feature.cmp(&b.feature))
        });
        rows.truncate(k.min(d));
        TopWeights { rows, clamped_from }
    }
}

/// Fits and evaluates one fold. Only the fold's training rows reach any
/// fitting step.
pub fn fit_fold(
    table: &FeatureTable,
    manifest: Option<&PairManifest>,
    confounds: &ConfoundSpec,
    cfg: &CvConfig,
    assignment: &FoldAssignment,
    fold: usize,
) -> Result<(FittedPipeline, FoldResult)> {
    let (train_rows, test_rows) = assignment.split(fold);
    let train = table.select_rows(&train_rows);
    let test = table.select_rows(&test_rows);
    let run = || -> Result<_> {
        let pipeline = FittedPipeline::fit(&train, manifest, confounds, cfg, cfg.inner_seed(fold))?;
        let probs = pipeline.predict(&test)?;
        let result = FoldResult {
            fold,
            n_train: train_rows.len(),
            n_test: test_rows.len(),
            roc_auc: roc_auc(&probs, test.labels())?,
            balanced_accuracy: balanced_accuracy(&probs, test.labels(), 0.5)?,
            selected_c: pipeline.grid.selected,
            grid: pipeline.grid.clone(),
            model: pipeline.model.clone(),
            feature_model: pipeline.feature_model.clone(),
        };
        Ok((pipeline, result))
    };
    run().map_err(|e| e.in_fold(fold))
}

/// Cross-validates the pipeline on folds drawn from `cfg.seed`.
pub fn run_pipeline(
    table: &FeatureTable,
    manifest: Option<&PairManifest>,
    confounds: &ConfoundSpec,
    cfg: &CvConfig,
) -> Result<CvReport> {
    cfg.validate()?;
    let assignment = stratified_kfold(table.labels(), cfg.folds, cfg.seed)?;
    run_pipeline_on(table, manifest, confounds, cfg, &assignment)
}

/// Cross-validates the pipeline on a given fold assignment.
pub fn run_pipeline_on(
    table: &FeatureTable,
    manifest: Option<&PairManifest>,
    confounds: &ConfoundSpec,
    cfg: &CvConfig,
    assignment: &FoldAssignment,
) -> Result<CvReport> {
    run_pipeline_fits(table, manifest, confounds, cfg, assignment).map(|(report, _)| report)
}

/// Like [`run_pipeline_on`], also returning each fold's fitted pipeline.
pub fn run_pipeline_fits(
    table: &FeatureTable,
    manifest: Option<&PairManifest>,
    confounds: &ConfoundSpec,
    cfg: &CvConfig,
    assignment: &FoldAssignment,
) -> Result<(CvReport, Vec<FittedPipeline>)> {
    cfg.validate()?;
    confounds.validate(table)?;
    if assignment.fold_of.len() != table.n_rows() {
        return Err(Error::Shape {
            expected: format!("{} fold entries", table.n_rows()),
            found: assignment.fold_of.len().to_string(),
        });
    }
    if let Some(m) = manifest {
        if m.n_features() != table.n_features() {
            return Err(Error::Shape {
                expected: format!("manifest over {} features", table.n_features()),
                found: m.n_features().to_string(),
            });
        }
    }
    let (pipelines, folds): (Vec<_>, Vec<_>) = (0..assignment.k)
        .into_par_iter()
        .map(|k| fit_fold(table, manifest, confounds, cfg, assignment, k))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .unzip();

    let d = table.n_features();
    let k = folds.len() as f64;
    let mut weight_mean = vec![0.0; d];
    let mut weight_std = vec![0.0; d];
    for j in 0..d {
        let w: Vec<f64> = folds
            .iter()
            .map(|f| f.feature_model.weights.values[j])
            .collect();
        let mean = w.iter().sum::<f64>() / k;
        weight_mean[j] = mean;
        weight_std[j] = (w.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / k).sqrt();
    }

    let pipeline = PipelineDescriptor {
        whitened: manifest.is_some_and(|m| m.pair_count() > 0),
        manifest_hash: manifest.map(PairManifest::content_hash),
        stages: manifest
            .map(|m| {
                m.stages()
                    .iter()
                    .map(|s| (s.label.clone(), s.alpha, s.pairs.len()))
                    .collect()
            })
            .unwrap_or_default(),
    };
    let report = CvReport {
        pipeline,
        feature_names: table.feature_names().to_vec(),
        assignment: assignment.clone(),
        folds,
        weight_mean,
        weight_std,
    };
    Ok((report, pipelines))
}

/// Fold-wise t-test of `a` against `b`. Both reports must share one fold
/// assignment.
pub fn compare_reports(
    a: &CvReport,
    b: &CvReport,
    metric: Metric,
    mode: TTestMode,
) -> Result<PairedTestResult> {
    if a.assignment != b.assignment {
        return Err(Error::FoldMismatch);
    }
    t_test(
        metric.name(),
        &a.metric_values(metric),
        &b.metric_values(metric),
        mode,
    )
}

/// Whitened and baseline arms evaluated on the same folds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub whitened: CvReport,
    pub baseline: CvReport,
    pub tests: Vec<PairedTestResult>,
}

pub fn run_comparison(
    table: &FeatureTable,
    manifest: &PairManifest,
    confounds: &ConfoundSpec,
    cfg: &CvConfig,
    mode: TTestMode,
) -> Result<Comparison> {
    cfg.validate()?;
    let assignment = stratified_kfold(table.labels(), cfg.folds, cfg.seed)?;
    let whitened = run_pipeline_on(table, Some(manifest), confounds, cfg, &assignment)?;
    let baseline = run_pipeline_on(table, None, confounds, cfg, &assignment)?;
    let tests = [Metric::RocAuc, Metric::BalancedAccuracy]
        .into_iter()
        .map(|m| compare_reports(&whitened, &baseline, m, mode))
        .collect::<Result<_>>()?;
    Ok(Comparison {
        whitened,
        baseline,
        tests,
    })
}
