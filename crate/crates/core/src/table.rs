//! In-memory subject × feature tables and their delimited-text encoding.

use std::collections::HashSet;
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum CovariateValues {
    Numeric(Vec<f64>),
    Categorical(Vec<String>),
}

impl CovariateValues {
    pub fn len(&self) -> usize {
        match self {
            CovariateValues::Numeric(v) => v.len(),
            CovariateValues::Categorical(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn select(&self, rows: &[usize]) -> Self {
        match self {
            CovariateValues::Numeric(v) => {
                CovariateValues::Numeric(rows.iter().map(|&r| v[r]).collect())
            }
            CovariateValues::Categorical(v) => {
                CovariateValues::Categorical(rows.iter().map(|&r| v[r].clone()).collect())
            }
        }
    }

    fn render(&self, row: usize) -> String {
        match self {
            CovariateValues::Numeric(v) => v[row].to_string(),
            CovariateValues::Categorical(v) => v[row].clone(),
        }
    }
}

/// A non-feature column: a confound such as age or site, or any other
/// per-subject attribute carried alongside the features.
#[derive(Debug, Clone, PartialEq)]
pub struct Covariate {
    pub name: String,
    pub values: CovariateValues,
}

/// Subjects in rows; named feature columns, covariates and a binary label.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTable {
    feature_names: Vec<String>,
    features: DMatrix<f64>,
    covariates: Vec<Covariate>,
    label_name: String,
    labels: Vec<u8>,
}

impl FeatureTable {
    pub fn new(
        feature_names: Vec<String>,
        features: DMatrix<f64>,
        covariates: Vec<Covariate>,
        label_name: impl Into<String>,
        labels: Vec<u8>,
    ) -> Result<Self> {
        let label_name = label_name.into();
        let n = features.nrows();
        if features.ncols() == 0 {
            return Err(Error::Table("the table has no feature columns".into()));
        }
        if feature_names.len() != features.ncols() {
            return Err(Error::Shape {
                expected: format!("{} feature names", features.ncols()),
                found: format!("{}", feature_names.len()),
            });
        }
        if labels.len() != n {
            return Err(Error::Shape {
                expected: format!("{n} labels"),
                found: format!("{}", labels.len()),
            });
        }
        if let Some(bad) = labels.iter().find(|&&l| l > 1) {
            return Err(Error::Table(format!("label value {bad} is not 0 or 1")));
        }
        let mut seen = HashSet::new();
        for name in feature_names
            .iter()
            .chain(covariates.iter().map(|c| &c.name))
            .chain(std::iter::once(&label_name))
        {
            if !seen.insert(name.as_str()) {
                return Err(Error::Table(format!("duplicate column name `{name}`")));
            }
        }
        for c in &covariates {
            if c.values.len() != n {
                return Err(Error::Shape {
                    expected: format!("{n} values in covariate `{}`", c.name),
                    found: format!("{}", c.values.len()),
                });
            }
            if let CovariateValues::Numeric(v) = &c.values {
                if v.iter().any(|x| !x.is_finite()) {
                    return Err(Error::NonFinite(format!("covariate `{}`", c.name)));
                }
            }
        }
        if features.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("feature matrix".into()));
        }
        Ok(Self {
            feature_names,
            features,
            covariates,
            label_name,
            labels,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.features.nrows()
    }

    pub fn n_features(&self) -> usize {
        self.features.ncols()
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn features(&self) -> &DMatrix<f64> {
        &self.features
    }

    pub fn features_mut(&mut self) -> &mut DMatrix<f64> {
        &mut self.features
    }

    pub fn covariates(&self) -> &[Covariate] {
        &self.covariates
    }

    pub fn covariate(&self, name: &str) -> Option<&Covariate> {
        self.covariates.iter().find(|c| c.name == name)
    }

    pub fn label_name(&self) -> &str {
        &self.label_name
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    /// Numeric view of a column that may be the label or a numeric covariate.
    pub fn numeric_column(&self, name: &str) -> Option<Vec<f64>> {
        if name == self.label_name {
            return Some(self.labels.iter().map(|&l| f64::from(l)).collect());
        }
        match &self.covariate(name)?.values {
            CovariateValues::Numeric(v) => Some(v.clone()),
            CovariateValues::Categorical(_) => None,
        }
    }

    /// A new table holding `rows` in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> Self {
        let features = DMatrix::from_fn(rows.len(), self.n_features(), |i, j| {
            self.features[(rows[i], j)]
        });
        Self {
            feature_names: self.feature_names.clone(),
            features,
            covariates: self
                .covariates
                .iter()
                .map(|c| Covariate {
                    name: c.name.clone(),
                    values: c.values.select(rows),
                })
                .collect(),
            label_name: self.label_name.clone(),
            labels: rows.iter().map(|&r| self.labels[r]).collect(),
        }
    }

    /// Same rows and metadata, different feature values.
    pub fn with_features(&self, features: DMatrix<f64>) -> Result<Self> {
        if features.shape() != self.features.shape() {
            return Err(Error::Shape {
                expected: format!("{:?}", self.features.shape()),
                found: format!("{:?}", features.shape()),
            });
        }
        Ok(Self {
            features,
            ..self.clone()
        })
    }

    /// Writes the table as comma-separated text: features, covariates, label.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
        self.write_records(&mut w).map_err(|e| csv_err(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn to_csv_string(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        self.write_records(&mut w).expect("writing to memory");
        String::from_utf8(w.into_inner().expect("flush to memory")).expect("utf-8 output")
    }

    fn write_records<W: std::io::Write>(&self, w: &mut csv::Writer<W>) -> csv::Result<()> {
        let header: Vec<&str> = self
            .feature_names
            .iter()
            .map(String::as_str)
            .chain(self.covariates.iter().map(|c| c.name.as_str()))
            .chain(std::iter::once(self.label_name.as_str()))
            .collect();
        w.write_record(&header)?;
        let mut record = Vec::with_capacity(header.len());
        for i in 0..self.n_rows() {
            record.clear();
            record.extend(self.features.row(i).iter().map(|x| x.to_string()));
            record.extend(self.covariates.iter().map(|c| c.values.render(i)));
            record.push(self.labels[i].to_string());
            w.write_record(&record)?;
        }
        Ok(())
    }

    pub fn read_csv(path: &Path, schema: &TableSchema) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(file, schema).map_err(|e| Error::Table(format!("{}: {e}", path.display())))
    }

    pub fn from_csv_str(text: &str, schema: &TableSchema) -> Result<Self> {
        Self::read_from(text.as_bytes(), schema).map_err(Error::Table)
    }

    fn read_from<R: std::io::Read>(reader: R, schema: &TableSchema) -> Result<Self, String> {
        let mut rdr = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(reader);
        let header: Vec<String> = rdr
            .headers()
            .map_err(|e| e.to_string())?
            .iter()
            .map(str::to_string)
            .collect();

        enum Slot {
            Feature,
            Numeric(usize),
            Categorical(usize),
            Label,
        }
        let mut feature_names = Vec::new();
        let mut numeric_names = Vec::new();
        let mut categorical_names = Vec::new();
        let mut slots = Vec::with_capacity(header.len());
        let mut label_seen = false;
        for name in &header {
            if *name == schema.label {
                label_seen = true;
                slots.push(Slot::Label);
            } else if schema.categorical.contains(name) {
                slots.push(Slot::Categorical(categorical_names.len()));
                categorical_names.push(name.clone());
            } else if schema.numeric.contains(name) {
                slots.push(Slot::Numeric(numeric_names.len()));
                numeric_names.push(name.clone());
            } else {
                slots.push(Slot::Feature);
                feature_names.push(name.clone());
            }
        }
        if !label_seen {
            return Err(format!("label column `{}` not found", schema.label));
        }
        for name in schema.categorical.iter().chain(&schema.numeric) {
            if !header.contains(name) {
                return Err(format!("column `{name}` not found"));
            }
        }

        let mut values: Vec<f64> = Vec::new();
        let mut numeric: Vec<Vec<f64>> = vec![Vec::new(); numeric_names.len()];
        let mut categorical: Vec<Vec<String>> = vec![Vec::new(); categorical_names.len()];
        let mut labels = Vec::new();
        for (r, record) in rdr.records().enumerate() {
            let record = record.map_err(|e| e.to_string())?;
            let line = r + 2;
            if record.len() != header.len() {
                return Err(format!(
                    "line {line}: expected {} fields, found {}",
                    header.len(),
                    record.len()
                ));
            }
            for (field, (slot, name)) in record.iter().zip(slots.iter().zip(&header)) {
                if is_missing(field) {
                    return Err(format!("line {line}: missing value in column `{name}`"));
                }
                let number = || {
                    field
                        .parse::<f64>()
                        .ok()
                        .filter(|x| x.is_finite())
                        .ok_or_else(|| {
                            format!(
                                "line {line}: `{field}` in column `{name}` is not a finite number"
                            )
                        })
                };
                match slot {
                    Slot::Feature => values.push(number()?),
                    Slot::Numeric(k) => numeric[*k].push(number()?),
                    Slot::Categorical(k) => categorical[*k].push(field.to_string()),
                    Slot::Label => labels.push(match field {
                        "0" => 0,
                        "1" => 1,
                        other => {
                            return Err(format!(
                                "line {line}: label `{other}` is not binary (expected 0 or 1)"
                            ))
                        }
                    }),
                }
            }
        }
        let n = labels.len();
        let features = DMatrix::from_row_slice(n, feature_names.len(), &values);
        let covariates = numeric_names
            .into_iter()
            .zip(numeric)
            .map(|(name, v)| Covariate {
                name,
                values: CovariateValues::Numeric(v),
            })
            .chain(
                categorical_names
                    .into_iter()
                    .zip(categorical)
                    .map(|(name, v)| Covariate {
                        name,
                        values: CovariateValues::Categorical(v),
                    }),
            )
            .collect();
        Self::new(
            feature_names,
            features,
            covariates,
            schema.label.clone(),
            labels,
        )
        .map_err(|e| e.to_string())
    }
}

fn is_missing(field: &str) -> bool {
    field.is_empty() || matches!(field, "NA" | "N/A" | "NaN" | "nan" | "null")
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    Error::Table(format!("{}: {e}", path.display()))
}

/// How to interpret the non-feature columns of a delimited table. Every
/// column not named here is a feature.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TableSchema {
    pub label: String,
    pub numeric: Vec<String>,
    pub categorical: Vec<String>,
}
