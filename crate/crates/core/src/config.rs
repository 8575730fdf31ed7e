//! Run configuration documents.
//!
//! ```toml
//! input = "cohort.csv"
//! label = "diagnosis"
//! out = "results"
//! seed = 7
//! folds = 10
//! manifest = "pairs.toml"      # or a [naming] table
//!
//! [confounds]
//! continuous = ["age"]
//! categorical = ["sex", "site"]
//!
//! [alpha]
//! "left-right" = 0.3
//! ```
//!
//! Relative paths are resolved against the directory holding the document.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::classifier::{validate_grid, Metric, SolverOptions, DEFAULT_C_GRID};
use crate::cv::CvConfig;
use crate::error::{Error, Result};
use crate::manifest::{derive_manifest_from_naming, NamingConvention, PairManifest, Unpaired};
use crate::metrics::TTestMode;
use crate::preprocess::ConfoundSpec;
use crate::table::{FeatureTable, TableSchema};

/// Regions whose full correlation block is written before and after
/// whitening.
pub const DEFAULT_CORRELATION_REGIONS: [&str; 4] = [
    "Amygdala",
    "Hippocampus",
    "Putamen",
    "AnteriorCingulateGyrus",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub input: PathBuf,
    #[serde(default = "default_label")]
    pub label: String,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_folds")]
    pub folds: usize,
    #[serde(default = "default_inner_folds")]
    pub inner_folds: usize,
    #[serde(default = "default_grid")]
    pub grid: Vec<f64>,
    #[serde(default = "default_true")]
    pub baseline: bool,
    #[serde(default = "default_metric")]
    pub selection_metric: Metric,
    #[serde(default = "default_mode")]
    pub t_test: TTestMode,
    #[serde(default = "default_top_k")]
    pub top_k: usize,
    pub manifest: Option<PathBuf>,
    pub naming: Option<NamingConvention>,
    #[serde(default)]
    pub confounds: ConfoundSpec,
    /// Non-feature columns that are neither confounds nor the label.
    #[serde(default)]
    pub extra_numeric: Vec<String>,
    #[serde(default)]
    pub extra_categorical: Vec<String>,
    /// Stage label → α, applied after the manifest is built.
    #[serde(default)]
    pub alpha: BTreeMap<String, f64>,
    #[serde(default = "default_regions")]
    pub correlation_regions: Vec<String>,
}

fn default_label() -> String {
    "diagnosis".into()
}
fn default_out() -> PathBuf {
    "results".into()
}
fn default_folds() -> usize {
    10
}
fn default_inner_folds() -> usize {
    5
}
fn default_grid() -> Vec<f64> {
    DEFAULT_C_GRID.to_vec()
}
fn default_true() -> bool {
    true
}
fn default_metric() -> Metric {
    Metric::RocAuc
}
fn default_mode() -> TTestMode {
    TTestMode::Paired
}
fn default_top_k() -> usize {
    7
}
fn default_regions() -> Vec<String> {
    DEFAULT_CORRELATION_REGIONS
        .iter()
        .map(|s| s.to_string())
        .collect()
}

impl RunConfig {
    /// A configuration with defaults for everything but the input path.
    pub fn for_input(input: impl Into<PathBuf>) -> Self {
        Self {
            input: input.into(),
            label: default_label(),
            out: default_out(),
            seed: 0,
            folds: default_folds(),
            inner_folds: default_inner_folds(),
            grid: default_grid(),
            baseline: true,
            selection_metric: default_metric(),
            t_test: default_mode(),
            top_k: default_top_k(),
            manifest: None,
            naming: None,
            confounds: ConfoundSpec::default(),
            extra_numeric: Vec::new(),
            extra_categorical: Vec::new(),
            alpha: BTreeMap::new(),
            correlation_regions: default_regions(),
        }
    }

    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut cfg: Self =
            toml::from_str(text).map_err(|e| Error::Config(e.message().trim().to_string()))?;
        cfg.input = base.join(&cfg.input);
        cfg.out = base.join(&cfg.out);
        cfg.manifest = cfg.manifest.map(|m| base.join(m));
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new(""));
        Self::parse(&text, base)
    }

    /// Checks everything that can be checked without reading the table.
    pub fn validate(&self) -> Result<()> {
        validate_grid(&self.grid)?;
        if self.folds < 2 {
            return Err(Error::Config(format!(
                "folds = {} must be at least 2",
                self.folds
            )));
        }
        if self.inner_folds < 2 {
            return Err(Error::Config(format!(
                "inner_folds = {} must be at least 2",
                self.inner_folds
            )));
        }
        if self.top_k == 0 {
            return Err(Error::Config("top_k must be at least 1".into()));
        }
        if !self.input.is_file() {
            return Err(Error::Config(format!(
                "input table {} does not exist",
                self.input.display()
            )));
        }
        match (&self.manifest, &self.naming) {
            (Some(_), Some(_)) => {
                return Err(Error::Config(
                    "give either `manifest` or `[naming]`, not both".into(),
                ))
            }
            (Some(m), None) if !m.is_file() => {
                return Err(Error::Config(format!(
                    "manifest {} does not exist",
                    m.display()
                )))
            }
            _ => {}
        }
        for (label, &a) in &self.alpha {
            if !(0.0..=1.0).contains(&a) {
                return Err(Error::Config(format!(
                    "alpha for stage `{label}` = {a} is outside [0, 1]"
                )));
            }
        }
        Ok(())
    }

    pub fn schema(&self) -> TableSchema {
        let c = &self.confounds;
        TableSchema {
            label: self.label.clone(),
            numeric: c
                .continuous
                .iter()
                .chain(&c.protected)
                .filter(|n| **n != self.label)
                .chain(&self.extra_numeric)
                .cloned()
                .collect(),
            categorical: c
                .categorical
                .iter()
                .chain(&self.extra_categorical)
                .cloned()
                .collect(),
        }
    }

    pub fn read_table(&self) -> Result<FeatureTable> {
        FeatureTable::read_csv(&self.input, &self.schema())
    }

    /// The naming convention in effect: the configured one, else the default
    /// when no manifest file is given.
    pub fn naming_convention(&self) -> Option<NamingConvention> {
        match (&self.manifest, &self.naming) {
            (_, Some(n)) => Some(n.clone()),
            (None, None) => Some(NamingConvention::default()),
            (Some(_), None) => None,
        }
    }

    /// Builds the manifest for `table` and applies the α overrides.
    pub fn build_manifest(&self, table: &FeatureTable) -> Result<(PairManifest, Vec<Unpaired>)> {
        let (mut manifest, unpaired) = match &self.manifest {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
                (
                    PairManifest::parse(&text, table.feature_names())?,
                    Vec::new(),
                )
            }
            None => {
                let conv = self
                    .naming_convention()
                    .expect("naming applies without a manifest");
                let d = derive_manifest_from_naming(table.feature_names(), &conv)?;
                (d.manifest, d.unpaired)
            }
        };
        for (label, &a) in &self.alpha {
            if manifest.set_alpha(label, a)? == 0 {
                return Err(Error::Config(format!(
                    "no manifest stage is labelled `{label}`"
                )));
            }
        }
        Ok((manifest, unpaired))
    }

    /// Stage labels that `--alpha-lr` and `--alpha-gmcsf` refer to.
    pub fn hemisphere_and_tissue_labels(&self) -> (String, String) {
        let n = self.naming.clone().unwrap_or_default();
        (n.hemisphere_label, n.tissue_label)
    }

    pub fn cv_config(&self) -> CvConfig {
        CvConfig {
            folds: self.folds,
            inner_folds: self.inner_folds,
            grid: self.grid.clone(),
            seed: self.seed,
            metric: self.selection_metric,
            solver: SolverOptions::default(),
        }
    }
}
