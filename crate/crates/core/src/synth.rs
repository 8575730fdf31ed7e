//! Seeded synthetic multi-site cohorts with paired regional volumes.
//!
//! Each region contributes four columns, `L_<region>_GM`, `R_<region>_GM`,
//! `L_<region>_CSF` and `R_<region>_CSF`, drawn jointly from a zero-mean
//! Gaussian whose correlation is the Kronecker product of a tissue block
//! (`r_gmcsf`) and a hemisphere block (`r_lr`). Regions are independent.

use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, Matrix4};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::table::{Covariate, CovariateValues, FeatureTable, TableSchema};

pub const AGE_COLUMN: &str = "age";
pub const SEX_COLUMN: &str = "sex";
pub const SITE_COLUMN: &str = "site";
pub const LABEL_COLUMN: &str = "diagnosis";

/// Seventy cortical and subcortical region names.
pub const DEFAULT_REGIONS: [&str; 70] = [
    "Accumbens",
    "Amygdala",
    "Caudate",
    "Cerebellum",
    "CerebellumExterior",
    "Hippocampus",
    "Pallidum",
    "Putamen",
    "Thalamus",
    "VentralDC",
    "LateralVentricle",
    "InferiorLateralVentricle",
    "ThirdVentricle",
    "FourthVentricle",
    "BasalForebrain",
    "AnteriorCingulateGyrus",
    "AnteriorInsula",
    "AnteriorOrbitalGyrus",
    "AngularGyrus",
    "Calcarine",
    "CentralOperculum",
    "Cuneus",
    "Entorhinal",
    "FrontalOperculum",
    "FrontalPole",
    "Fusiform",
    "GyrusRectus",
    "InferiorOccipitalGyrus",
    "InferiorTemporalGyrus",
    "Lingual",
    "LateralOrbitalGyrus",
    "MiddleCingulateGyrus",
    "MedialFrontalCortex",
    "MiddleFrontalGyrus",
    "MiddleOccipitalGyrus",
    "MedialOrbitalGyrus",
    "PostcentralGyrusMedial",
    "PrecentralGyrusMedial",
    "SuperiorFrontalGyrusMedial",
    "MiddleTemporalGyrus",
    "OccipitalPole",
    "OccipitalFusiform",
    "OpercularInferiorFrontal",
    "OrbitalInferiorFrontal",
    "PosteriorCingulateGyrus",
    "Precuneus",
    "Parahippocampal",
    "PosteriorInsula",
    "ParietalOperculum",
    "PostcentralGyrus",
    "PosteriorOrbitalGyrus",
    "PlanumPolare",
    "PrecentralGyrus",
    "PlanumTemporale",
    "Subcallosal",
    "SuperiorFrontalGyrus",
    "SupplementaryMotorCortex",
    "Supramarginal",
    "SuperiorOccipitalGyrus",
    "SuperiorParietalLobule",
    "SuperiorTemporalGyrus",
    "TemporalPole",
    "TriangularInferiorFrontal",
    "TransverseTemporalGyrus",
    "CerebellarVermalI_V",
    "CerebellarVermalVI_VII",
    "CerebellarVermalVIII_X",
    "OpticChiasm",
    "CorpusCallosum",
    "Brainstem",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CohortSpec {
    pub n_subjects: usize,
    pub region_names: Vec<String>,
    /// Correlation between homologous left and right columns.
    pub r_lr: f64,
    /// Correlation between GM and CSF columns of one hemisphere.
    pub r_gmcsf: f64,
    /// `(column, shift)`: patients' mean moves by `shift` latent sds.
    pub effect_table: Vec<(String, f64)>,
    pub site_count: usize,
    /// Explicit per-site offsets added to every column; when empty, offsets
    /// are drawn per site and column from `N(0, site_offset_sd²)`.
    pub site_offsets: Vec<f64>,
    pub site_offset_sd: f64,
    /// Shift per standardized year of age: GM columns fall, CSF columns rise.
    pub age_effect: f64,
    /// Shift for male subjects: GM columns fall, CSF columns rise.
    pub sex_effect: f64,
    pub age_mean: f64,
    pub age_sd: f64,
    pub female_fraction: f64,
    pub prevalence: f64,
    pub seed: u64,
}

impl Default for CohortSpec {
    fn default() -> Self {
        default_bd_like_spec()
    }
}

/// Bilateral GM loss with CSF gain in hippocampus and amygdala, the reverse
/// in pallidum, enlarged lateral and third ventricles, and one right-sided
/// fourth-ventricle effect.
fn default_effects() -> Vec<(String, f64)> {
    let mut effects = Vec::new();
    for (region, gm_shift) in [
        ("Hippocampus", -0.3),
        ("Pallidum", 0.3),
        ("Amygdala", -0.25),
    ] {
        for side in ["L", "R"] {
            effects.push((format!("{side}_{region}_GM"), gm_shift));
            effects.push((format!("{side}_{region}_CSF"), -gm_shift));
        }
    }
    for region in ["LateralVentricle", "ThirdVentricle"] {
        for side in ["L", "R"] {
            effects.push((format!("{side}_{region}_CSF"), 0.35));
        }
    }
    effects.push(("R_FourthVentricle_CSF".into(), 0.35));
    effects
}

/// 861 subjects over 12 sites with 44.1% patients.
pub fn default_bd_like_spec() -> CohortSpec {
    CohortSpec {
        n_subjects: 861,
        region_names: DEFAULT_REGIONS.iter().map(|s| s.to_string()).collect(),
        r_lr: 0.7,
        r_gmcsf: -0.5,
        effect_table: default_effects(),
        site_count: 12,
        site_offsets: Vec::new(),
        site_offset_sd: 0.3,
        age_effect: 0.3,
        sex_effect: 0.2,
        age_mean: 37.69,
        age_sd: 11.75,
        female_fraction: 0.564,
        prevalence: 0.441,
        seed: 0,
    }
}

/// The feature columns of `regions` in generator order.
pub fn column_names(regions: &[String]) -> Vec<String> {
    regions
        .iter()
        .flat_map(|r| {
            [
                format!("L_{r}_GM"),
                format!("R_{r}_GM"),
                format!("L_{r}_CSF"),
                format!("R_{r}_CSF"),
            ]
        })
        .collect()
}

impl CohortSpec {
    /// Within-region correlation over `(L_GM, R_GM, L_CSF, R_CSF)`.
    pub fn region_correlation(&self) -> Matrix4<f64> {
        let (h, t) = (self.r_lr, self.r_gmcsf);
        Matrix4::from_fn(|i, j| {
            let hemi = if i % 2 == j % 2 { 1.0 } else { h };
            let tissue = if i / 2 == j / 2 { 1.0 } else { t };
            hemi * tissue
        })
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidCohort(m));
        if self.n_subjects < 2 {
            return bad(format!("n_subjects {} must be at least 2", self.n_subjects));
        }
        if self.region_names.is_empty() {
            return bad("region_names is empty".into());
        }
        for (name, r) in [("r_lr", self.r_lr), ("r_gmcsf", self.r_gmcsf)] {
            if r.is_nan() || r.abs() >= 1.0 {
                return bad(format!("{name} = {r} must lie strictly inside (-1, 1)"));
            }
        }
        if !(self.prevalence > 0.0 && self.prevalence < 1.0) {
            return bad(format!("prevalence {} must lie in (0, 1)", self.prevalence));
        }
        let positives = self.positive_count();
        if positives == 0 || positives == self.n_subjects {
            return bad(format!(
                "prevalence {} leaves one class empty at n = {}",
                self.prevalence, self.n_subjects
            ));
        }
        if !(0.0..=1.0).contains(&self.female_fraction) {
            return bad(format!(
                "female_fraction {} must lie in [0, 1]",
                self.female_fraction
            ));
        }
        if self.site_count == 0 {
            return bad("site_count must be at least 1".into());
        }
        if !self.site_offsets.is_empty() && self.site_offsets.len() != self.site_count {
            return bad(format!(
                "{} site offsets given for {} sites",
                self.site_offsets.len(),
                self.site_count
            ));
        }
        let finite = [
            self.site_offset_sd,
            self.age_effect,
            self.sex_effect,
            self.age_mean,
            self.age_sd,
        ];
        if finite.iter().any(|x| !x.is_finite())
            || self.site_offset_sd < 0.0
            || self.age_sd < 0.0
            || self.site_offsets.iter().any(|x| !x.is_finite())
        {
            return bad("confound parameters must be finite, with non-negative spreads".into());
        }
        let columns = column_names(&self.region_names);
        let mut seen = std::collections::HashSet::new();
        for c in &columns {
            if !seen.insert(c) {
                return bad(format!("duplicate region column `{c}`"));
            }
        }
        for (column, shift) in &self.effect_table {
            if !columns.contains(column) {
                return bad(format!("effect column `{column}` is not generated"));
            }
            if !shift.is_finite() {
                return bad(format!("effect on `{column}` is not finite"));
            }
        }
        let min_eig = self
            .region_correlation()
            .symmetric_eigenvalues()
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min);
        if min_eig <= 0.0 {
            return Err(Error::NotPositiveDefinite(min_eig));
        }
        Ok(())
    }

    /// Reads a TOML specification; omitted fields keep their defaults.
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::InvalidCohort(e.message().trim().to_string()))
    }

    pub fn positive_count(&self) -> usize {
        (self.prevalence * self.n_subjects as f64).round() as usize
    }

    /// Hex SHA-256 of the spec's JSON encoding.
    pub fn content_hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("spec is serializable");
        hex::encode(Sha256::digest(&json))
    }
}

/// What the generator actually planted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub spec_hash: String,
    pub spec: CohortSpec,
    pub effect_columns: Vec<String>,
    pub effects: Vec<(String, f64)>,
    /// Per-column age coefficient per standardized year.
    pub age_coefficients: Vec<f64>,
    /// Per-column shift for male subjects.
    pub sex_coefficients: Vec<f64>,
    /// `site_offsets[s][j]`: offset of site `s` on column `j`.
    pub site_offsets: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedCohort {
    pub table: FeatureTable,
    pub truth: GroundTruth,
}

impl GeneratedCohort {
    /// Schema that reads the written table back.
    pub fn schema() -> TableSchema {
        TableSchema {
            label: LABEL_COLUMN.into(),
            numeric: vec![AGE_COLUMN.into()],
            categorical: vec![SEX_COLUMN.into(), SITE_COLUMN.into()],
        }
    }
}

impl GeneratedCohort {
    /// `<dir>/<stem>.truth.json` for a table written to `<dir>/<stem>.csv`.
    pub fn sidecar_path(table_path: &Path) -> PathBuf {
        let stem = table_path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        table_path.with_file_name(format!("{stem}.truth.json"))
    }

    /// Writes the table and its ground-truth sidecar.
    pub fn write(&self, table_path: &Path) -> Result<()> {
        if let Some(parent) = table_path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        self.table.write_csv(table_path)?;
        let side = Self::sidecar_path(table_path);
        let json = serde_json::to_string_pretty(&self.truth).expect("ground truth serializes");
        std::fs::write(&side, json).map_err(|e| Error::io(&side, e))
    }
}

pub fn site_name(s: usize) -> String {
    format!("site{:02}", s + 1)
}

/// Draws a cohort. The same spec always yields the same cohort.
pub fn generate(spec: &CohortSpec) -> Result<GeneratedCohort> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = spec.n_subjects;
    let columns = column_names(&spec.region_names);
    let d = columns.len();

    let mut labels = vec![0u8; n];
    labels[..spec.positive_count()].fill(1);
    labels.shuffle(&mut rng);

    let sites: Vec<usize> = (0..n)
        .map(|_| rng.random_range(0..spec.site_count))
        .collect();
    let age_dist = Normal::new(spec.age_mean, spec.age_sd).expect("validated");
    let ages: Vec<f64> = (0..n).map(|_| age_dist.sample(&mut rng)).collect();
    let female: Vec<bool> = (0..n)
        .map(|_| rng.random_bool(spec.female_fraction))
        .collect();

    let site_offsets: Vec<Vec<f64>> = (0..spec.site_count)
        .map(|s| match spec.site_offsets.get(s) {
            Some(&o) => vec![o; d],
            None => (0..d)
                .map(|_| spec.site_offset_sd * rng.sample::<f64, _>(StandardNormal))
                .collect(),
        })
        .collect();
    // GM shrinks and CSF grows with age and in males.
    let tissue_sign = |j: usize| if (j % 4) < 2 { -1.0 } else { 1.0 };
    let age_coefficients: Vec<f64> = (0..d).map(|j| tissue_sign(j) * spec.age_effect).collect();
    let sex_coefficients: Vec<f64> = (0..d).map(|j| tissue_sign(j) * spec.sex_effect).collect();
    let mut shift = vec![0.0; d];
    for (column, s) in &spec.effect_table {
        let j = columns.iter().position(|c| c == column).expect("validated");
        shift[j] += s;
    }

    let chol = spec
        .region_correlation()
        .cholesky()
        .expect("validated positive definite")
        .l();
    let mut x = DMatrix::zeros(n, d);
    for i in 0..n {
        let z_age = if spec.age_sd > 0.0 {
            (ages[i] - spec.age_mean) / spec.age_sd
        } else {
            0.0
        };
        let male = if female[i] { 0.0 } else { 1.0 };
        for region in 0..spec.region_names.len() {
            let e = nalgebra::Vector4::from_fn(|_, _| rng.sample::<f64, _>(StandardNormal));
            let v = chol * e;
            for k in 0..4 {
                let j = 4 * region + k;
                x[(i, j)] = v[k]
                    + shift[j] * f64::from(labels[i])
                    + site_offsets[sites[i]][j]
                    + age_coefficients[j] * z_age
                    + sex_coefficients[j] * male;
            }
        }
    }

    let covariates = vec![
        Covariate {
            name: AGE_COLUMN.into(),
            values: CovariateValues::Numeric(ages),
        },
        Covariate {
            name: SEX_COLUMN.into(),
            values: CovariateValues::Categorical(
                female
                    .iter()
                    .map(|&f| if f { "F" } else { "M" }.to_string())
                    .collect(),
            ),
        },
        Covariate {
            name: SITE_COLUMN.into(),
            values: CovariateValues::Categorical(sites.iter().map(|&s| site_name(s)).collect()),
        },
    ];
    let table = FeatureTable::new(columns, x, covariates, LABEL_COLUMN, labels)?;
    let effects: Vec<(String, f64)> = spec
        .effect_table
        .iter()
        .filter(|(_, s)| *s != 0.0)
        .cloned()
        .collect();
    Ok(GeneratedCohort {
        table,
        truth: GroundTruth {
            spec_hash: spec.content_hash(),
            spec: spec.clone(),
            effect_columns: effects.iter().map(|(c, _)| c.clone()).collect(),
            effects,
            age_coefficients,
            sex_coefficients,
            site_offsets,
        },
    })
}
