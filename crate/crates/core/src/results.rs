//! Whitened-versus-baseline runs and their results directories.
//!
//! A results directory holds:
//!
//! | file | contents |
//! |---|---|
//! | `run.json` | run metadata |
//! | `manifest.toml` | the manifest in effect |
//! | `<arm>/report.json` | full cross-validation report |
//! | `<arm>/folds.csv` | per-fold metrics and selected C |
//! | `<arm>/weights.csv` | feature-space weights, mean, std and per fold |
//! | `<arm>/top<k>.csv` | the `k` largest mean weights |
//! | `<arm>/pipelines.json` | fitted per-fold pipelines |
//! | `paired_tests.json`, `paired_tests.csv` | fold-wise tests, whitened − baseline |
//! | `pair_correlations.csv` | per fold and declared pair, correlations through the stages |
//! | `correlations_before.csv`, `correlations_after.csv` | selected regions, first fold's training rows |
//! | `summary.txt` | the rendered summary |
//!
//! `<arm>` is `whitened` and, unless disabled, `baseline`.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::artifact::{self, PIPELINES_FORMAT};
use crate::classifier::Metric;
use crate::config::RunConfig;
use crate::cv::{
    compare_reports, run_pipeline_fits, stratified_kfold, CvReport, FittedPipeline, PairDiagnostic,
};
use crate::error::{Error, Result};
use crate::manifest::{NamingConvention, PairManifest, Unpaired};
use crate::metrics::{PairedTestResult, TTestMode, TestOutcome};
use crate::table::FeatureTable;
use crate::whitener::column_correlation;

pub const RUN_FORMAT: &str = "pairwhiten/run";
pub const REPORT_FORMAT: &str = "pairwhiten/cv-report";
pub const TESTS_FORMAT: &str = "pairwhiten/paired-tests";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunInfo {
    pub input: String,
    pub n_subjects: usize,
    pub n_features: usize,
    pub folds: usize,
    pub inner_folds: usize,
    pub seed: u64,
    pub grid: Vec<f64>,
    pub selection_metric: Metric,
    pub t_test: TTestMode,
    pub top_k: usize,
    pub manifest_hash: String,
    /// `(label, alpha, pair count)` per stage.
    pub stages: Vec<(String, f64, usize)>,
    /// Features without a partner in some derived stage.
    pub unpaired: Vec<String>,
    pub baseline: bool,
}

/// A square correlation matrix with named rows and columns.
#[derive(Debug, Clone, PartialEq)]
pub struct NamedMatrix {
    pub names: Vec<String>,
    pub values: DMatrix<f64>,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub info: RunInfo,
    pub manifest: PairManifest,
    pub whitened: CvReport,
    pub whitened_pipelines: Vec<FittedPipeline>,
    pub baseline: Option<CvReport>,
    pub baseline_pipelines: Vec<FittedPipeline>,
    pub tests: Vec<PairedTestResult>,
    /// `(fold, diagnostic)` for every fold and declared pair.
    pub pair_diagnostics: Vec<(usize, PairDiagnostic)>,
    pub correlations_before: NamedMatrix,
    pub correlations_after: NamedMatrix,
}

/// Reads the configured table and runs both arms.
pub fn execute(cfg: &RunConfig) -> Result<RunOutcome> {
    cfg.validate()?;
    let table = cfg.read_table()?;
    let (manifest, unpaired) = cfg.build_manifest(&table)?;
    execute_on(&table, &manifest, &unpaired, cfg)
}

/// Runs the whitened arm and, if configured, the baseline arm on one shared
/// fold assignment.
pub fn execute_on(
    table: &FeatureTable,
    manifest: &PairManifest,
    unpaired: &[Unpaired],
    cfg: &RunConfig,
) -> Result<RunOutcome> {
    let cv = cfg.cv_config();
    cv.validate()?;
    let assignment = stratified_kfold(table.labels(), cv.folds, cv.seed)?;
    let (whitened, whitened_pipelines) =
        run_pipeline_fits(table, Some(manifest), &cfg.confounds, &cv, &assignment)?;
    let (baseline, baseline_pipelines) = if cfg.baseline {
        let (r, p) = run_pipeline_fits(table, None, &cfg.confounds, &cv, &assignment)?;
        (Some(r), p)
    } else {
        (None, Vec::new())
    };
    let tests = match &baseline {
        Some(b) => [Metric::RocAuc, Metric::BalancedAccuracy]
            .into_iter()
            .map(|m| compare_reports(&whitened, b, m, cfg.t_test))
            .collect::<Result<_>>()?,
        None => Vec::new(),
    };

    let mut pair_diagnostics = Vec::new();
    for (fold, pipeline) in whitened_pipelines.iter().enumerate() {
        let train = table.select_rows(&assignment.split(fold).0);
        for d in pipeline.pair_diagnostics(&train)? {
            pair_diagnostics.push((fold, d));
        }
    }

    let convention = cfg.naming.clone().unwrap_or_default();
    let columns = region_columns(table.feature_names(), &cfg.correlation_regions, &convention);
    let first = &whitened_pipelines[0];
    let train = table.select_rows(&assignment.split(0).0);
    let before = first.feature_inputs(&train)?;
    let after = match &first.whitener {
        Some(w) => w.transform(&before)?,
        None => before.clone(),
    };
    let names: Vec<String> = columns
        .iter()
        .map(|&j| table.feature_names()[j].clone())
        .collect();
    let correlations_before = NamedMatrix {
        names: names.clone(),
        values: correlation_block(&before, &columns),
    };
    let correlations_after = NamedMatrix {
        names,
        values: correlation_block(&after, &columns),
    };

    let info = RunInfo {
        input: cfg.input.display().to_string(),
        n_subjects: table.n_rows(),
        n_features: table.n_features(),
        folds: cv.folds,
        inner_folds: cv.inner_folds,
        seed: cv.seed,
        grid: cv.grid.clone(),
        selection_metric: cv.metric,
        t_test: cfg.t_test,
        top_k: cfg.top_k,
        manifest_hash: manifest.content_hash(),
        stages: whitened.pipeline.stages.clone(),
        unpaired: unpaired.iter().map(|u| u.name.clone()).collect(),
        baseline: cfg.baseline,
    };
    Ok(RunOutcome {
        info,
        manifest: manifest.clone(),
        whitened,
        whitened_pipelines,
        baseline,
        baseline_pipelines,
        tests,
        pair_diagnostics,
        correlations_before,
        correlations_after,
    })
}

/// Indices of the feature columns belonging to `regions`, in table order.
pub fn region_columns(names: &[String], regions: &[String], c: &NamingConvention) -> Vec<usize> {
    let region_of = |name: &str| -> Option<String> {
        let rest = name
            .strip_prefix(c.left_prefix.as_str())
            .or_else(|| name.strip_prefix(c.right_prefix.as_str()))?;
        let core = rest
            .strip_suffix(c.gm_suffix.as_str())
            .or_else(|| rest.strip_suffix(c.csf_suffix.as_str()))?;
        Some(core.to_string())
    };
    (0..names.len())
        .filter(|&j| region_of(&names[j]).is_some_and(|r| regions.contains(&r)))
        .collect()
}

fn correlation_block(x: &DMatrix<f64>, columns: &[usize]) -> DMatrix<f64> {
    let m = columns.len();
    DMatrix::from_fn(m, m, |a, b| {
        if a == b {
            1.0
        } else {
            column_correlation(x, columns[a], columns[b])
        }
    })
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> Error + '_ {
    move |e| Error::Table(format!("{}: {e}", path.display()))
}

fn write_rows(path: &Path, header: &[String], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    w.write_record(header).map_err(csv_err(path))?;
    for r in rows {
        w.write_record(r).map_err(csv_err(path))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn strings<const N: usize>(items: [&str; N]) -> Vec<String> {
    items.iter().map(|s| s.to_string()).collect()
}

fn opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

fn write_arm(
    dir: &Path,
    report: &CvReport,
    pipelines: &[FittedPipeline],
    top_k: usize,
) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    artifact::save(&dir.join("report.json"), REPORT_FORMAT, report)?;
    artifact::save(&dir.join("pipelines.json"), PIPELINES_FORMAT, &pipelines)?;

    let folds: Vec<Vec<String>> = report
        .folds
        .iter()
        .map(|f| {
            vec![
                (f.fold + 1).to_string(),
                f.n_train.to_string(),
                f.n_test.to_string(),
                f.roc_auc.to_string(),
                f.balanced_accuracy.to_string(),
                f.selected_c.to_string(),
                f.model.convergence.converged.to_string(),
            ]
        })
        .collect();
    write_rows(
        &dir.join("folds.csv"),
        &strings([
            "fold",
            "n_train",
            "n_test",
            "roc_auc",
            "balanced_accuracy",
            "selected_c",
            "converged",
        ]),
        &folds,
    )?;

    let mut header = strings(["feature", "mean", "std"]);
    header.extend((1..=report.folds.len()).map(|k| format!("fold_{k}")));
    let weights: Vec<Vec<String>> = (0..report.feature_names.len())
        .map(|j| {
            let mut row = vec![
                report.feature_names[j].clone(),
                report.weight_mean[j].to_string(),
                report.weight_std[j].to_string(),
            ];
            row.extend(
                report
                    .folds
                    .iter()
                    .map(|f| f.feature_model.weights.values[j].to_string()),
            );
            row
        })
        .collect();
    write_rows(&dir.join("weights.csv"), &header, &weights)?;

    let top = report.top_k_weights(top_k);
    let rows: Vec<Vec<String>> = top
        .rows
        .iter()
        .enumerate()
        .map(|(i, r)| {
            vec![
                (i + 1).to_string(),
                r.feature.clone(),
                r.mean.to_string(),
                r.std.to_string(),
                format!("{:.3} ± {:.3}", r.mean, r.std),
            ]
        })
        .collect();
    write_rows(
        &dir.join(format!("top{top_k}.csv")),
        &strings(["rank", "feature", "mean", "std", "display"]),
        &rows,
    )
}

fn write_matrix(path: &Path, m: &NamedMatrix) -> Result<()> {
    let mut header = vec!["feature".to_string()];
    header.extend(m.names.iter().cloned());
    let rows: Vec<Vec<String>> = (0..m.names.len())
        .map(|i| {
            let mut row = vec![m.names[i].clone()];
            row.extend((0..m.names.len()).map(|j| m.values[(i, j)].to_string()));
            row
        })
        .collect();
    write_rows(path, &header, &rows)
}

fn write_all(dir: &Path, o: &RunOutcome) -> Result<()> {
    artifact::save(&dir.join("run.json"), RUN_FORMAT, &o.info)?;
    let manifest_path = dir.join("manifest.toml");
    fs::write(&manifest_path, o.manifest.to_toml()).map_err(|e| Error::io(&manifest_path, e))?;
    write_arm(
        &dir.join("whitened"),
        &o.whitened,
        &o.whitened_pipelines,
        o.info.top_k,
    )?;
    if let Some(b) = &o.baseline {
        write_arm(
            &dir.join("baseline"),
            b,
            &o.baseline_pipelines,
            o.info.top_k,
        )?;
    }
    artifact::save(&dir.join("paired_tests.json"), TESTS_FORMAT, &o.tests)?;
    let tests: Vec<Vec<String>> = o
        .tests
        .iter()
        .map(|t| {
            vec![
                t.metric.clone(),
                serde_json::to_value(t.mode)
                    .unwrap()
                    .as_str()
                    .unwrap_or_default()
                    .to_string(),
                t.mean_difference.to_string(),
                opt(t.t_statistic),
                opt(t.p_value),
                t.degrees_of_freedom.to_string(),
                serde_json::to_value(t.outcome)
                    .unwrap()
                    .as_str()
                    .unwrap_or_default()
                    .to_string(),
            ]
        })
        .collect();
    write_rows(
        &dir.join("paired_tests.csv"),
        &strings([
            "metric",
            "mode",
            "mean_difference",
            "t",
            "p",
            "df",
            "outcome",
        ]),
        &tests,
    )?;
    let pairs: Vec<Vec<String>> = o
        .pair_diagnostics
        .iter()
        .map(|(fold, d)| {
            vec![
                (fold + 1).to_string(),
                d.stage.to_string(),
                d.label.clone(),
                d.alpha.to_string(),
                d.first.clone(),
                d.second.clone(),
                d.raw_correlation.to_string(),
                d.stage_input_correlation.to_string(),
                d.stage_output_correlation.to_string(),
                d.final_correlation.to_string(),
                d.floored.to_string(),
            ]
        })
        .collect();
    write_rows(
        &dir.join("pair_correlations.csv"),
        &strings([
            "fold", "stage", "label", "alpha", "first", "second", "r_raw", "r_in", "r_out",
            "r_final", "floored",
        ]),
        &pairs,
    )?;
    write_matrix(&dir.join("correlations_before.csv"), &o.correlations_before)?;
    write_matrix(&dir.join("correlations_after.csv"), &o.correlations_after)?;
    let loaded = LoadedResults {
        info: o.info.clone(),
        whitened: o.whitened.clone(),
        baseline: o.baseline.clone(),
        tests: o.tests.clone(),
    };
    let summary = dir.join("summary.txt");
    fs::write(&summary, render_summary(&loaded)).map_err(|e| Error::io(&summary, e))
}

/// Exclusive ownership of an output directory for the lifetime of the guard.
struct DirLock(PathBuf);

impl DirLock {
    fn acquire(out: &Path) -> Result<Self> {
        let path = sibling(out, ".lock");
        fs::OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(&path)
            .map_err(|e| match e.kind() {
                std::io::ErrorKind::AlreadyExists => Error::Config(format!(
                    "{} is locked by another run (remove {} if that run is gone)",
                    out.display(),
                    path.display()
                )),
                _ => Error::io(&path, e),
            })?;
        Ok(Self(path))
    }
}

impl Drop for DirLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.0);
    }
}

fn sibling(out: &Path, suffix: &str) -> PathBuf {
    let name = out
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    out.with_file_name(format!("{name}{suffix}"))
}

/// Writes every result file into `out`. Files are staged in a sibling
/// directory and moved into place only when complete; an existing results
/// directory is replaced, any other non-empty directory is refused.
pub fn write_results(out: &Path, outcome: &RunOutcome) -> Result<()> {
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let _lock = DirLock::acquire(out)?;
    if out.exists() {
        let empty = fs::read_dir(out)
            .map_err(|e| Error::io(out, e))?
            .next()
            .is_none();
        if !empty && !out.join("run.json").is_file() {
            return Err(Error::Config(format!(
                "{} exists and is not a results directory",
                out.display()
            )));
        }
    }
    let staging = sibling(out, &format!(".partial-{}", std::process::id()));
    if staging.exists() {
        fs::remove_dir_all(&staging).map_err(|e| Error::io(&staging, e))?;
    }
    fs::create_dir_all(&staging).map_err(|e| Error::io(&staging, e))?;
    if let Err(e) = write_all(&staging, outcome) {
        let _ = fs::remove_dir_all(&staging);
        return Err(e);
    }
    if out.exists() {
        fs::remove_dir_all(out).map_err(|e| Error::io(out, e))?;
    }
    fs::rename(&staging, out).map_err(|e| Error::io(out, e))
}

/// What `render_summary` needs from a results directory.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedResults {
    pub info: RunInfo,
    pub whitened: CvReport,
    pub baseline: Option<CvReport>,
    pub tests: Vec<PairedTestResult>,
}

pub fn load_results(dir: &Path) -> Result<LoadedResults> {
    let mut required = vec!["run.json", "whitened/report.json", "paired_tests.json"];
    let baseline_path = dir.join("baseline/report.json");
    let missing: Vec<String> = required
        .drain(..)
        .filter(|f| !dir.join(f).is_file())
        .map(str::to_string)
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingResults {
            path: dir.to_path_buf(),
            missing,
        });
    }
    let info: RunInfo = artifact::load(&dir.join("run.json"), RUN_FORMAT)?;
    if info.baseline && !baseline_path.is_file() {
        return Err(Error::MissingResults {
            path: dir.to_path_buf(),
            missing: vec!["baseline/report.json".into()],
        });
    }
    Ok(LoadedResults {
        whitened: artifact::load(&dir.join("whitened/report.json"), REPORT_FORMAT)?,
        baseline: if info.baseline {
            Some(artifact::load(&baseline_path, REPORT_FORMAT)?)
        } else {
            None
        },
        tests: artifact::load(&dir.join("paired_tests.json"), TESTS_FORMAT)?,
        info,
    })
}

/// `mean ± std` of fractions, as percentages with two decimals.
pub fn format_percent(mean: f64, std: f64) -> String {
    format!("{:.2} ± {:.2}", 100.0 * mean, 100.0 * std)
}

pub fn render_summary(r: &LoadedResults) -> String {
    let i = &r.info;
    let mut s = String::new();
    let _ = writeln!(s, "input      {}", i.input);
    let _ = writeln!(
        s,
        "subjects   {}   features {}   folds {}   seed {}",
        i.n_subjects, i.n_features, i.folds, i.seed
    );
    for (label, alpha, pairs) in &i.stages {
        let _ = writeln!(s, "stage      {label}: {pairs} pairs, alpha {alpha}");
    }
    if !i.unpaired.is_empty() {
        let _ = writeln!(
            s,
            "unpaired   {} features pass through unchanged",
            i.unpaired.len()
        );
    }

    let _ = writeln!(
        s,
        "\n{:<12}{:>18}{:>18}",
        "pipeline", "ROC-AUC (%)", "BAcc (%)"
    );
    let mut arms = vec![("whitened", &r.whitened)];
    if let Some(b) = &r.baseline {
        arms.push(("baseline", b));
    }
    for (name, rep) in &arms {
        let (am, asd) = rep.metric_summary(Metric::RocAuc);
        let (bm, bsd) = rep.metric_summary(Metric::BalancedAccuracy);
        let _ = writeln!(
            s,
            "{name:<12}{:>18}{:>18}",
            format_percent(am, asd),
            format_percent(bm, bsd)
        );
    }

    if !r.tests.is_empty() {
        let mode = match r.tests[0].mode {
            TTestMode::Paired => "paired",
            TTestMode::TwoSample => "two-sample",
        };
        let _ = writeln!(
            s,
            "\nwhitened − baseline, {mode} t-test over {} folds",
            i.folds
        );
        for t in &r.tests {
            let conclusion = match t.outcome {
                TestOutcome::NoSignificantDifference => "no significant difference".to_string(),
                TestOutcome::SignificantDifference => "significant difference".to_string(),
                TestOutcome::ZeroVariance if t.exactly_equal() => {
                    "identical on every fold".to_string()
                }
                TestOutcome::ZeroVariance => "constant difference on every fold".to_string(),
            };
            let stats = match (t.t_statistic, t.p_value) {
                (Some(tv), Some(p)) => format!("t({}) = {tv:.3}, p = {p:.4}", t.degrees_of_freedom),
                _ => "t undefined".to_string(),
            };
            let _ = writeln!(
                s,
                "  {:<18} {:+.2} points   {stats}   {conclusion}",
                t.metric,
                100.0 * t.mean_difference
            );
        }
    }

    for (name, rep) in &arms {
        let top = rep.top_k_weights(i.top_k);
        let _ = writeln!(s, "\ntop {} weights, {name}", top.rows.len());
        if let Some(k) = top.clamped_from {
            let _ = writeln!(s, "  ({k} requested, only {} features)", top.rows.len());
        }
        for (rank, row) in top.rows.iter().enumerate() {
            let _ = writeln!(
                s,
                "  {:>2}. {:<32} {:>8.3} ± {:.3}",
                rank + 1,
                row.feature,
                row.mean,
                row.std
            );
        }
    }
    s
}
