//! Versioned JSON artifacts for fitted transforms and models.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::manifest::PairManifest;
use crate::preprocess::FittedScaler;
use crate::table::FeatureTable;
use crate::whitener::FittedWhitener;

pub const ARTIFACT_VERSION: u32 = 1;
pub const WHITENER_FORMAT: &str = "pairwhiten/whitener";
pub const PIPELINES_FORMAT: &str = "pairwhiten/pipelines";

#[derive(Debug, Serialize, Deserialize)]
struct Envelope<T> {
    format: String,
    version: u32,
    payload: T,
}

pub fn to_json<T: Serialize>(format: &str, payload: &T) -> String {
    let env = Envelope {
        format: format.to_string(),
        version: ARTIFACT_VERSION,
        payload,
    };
    serde_json::to_string_pretty(&env).expect("artifact payloads serialize")
}

pub fn from_json<T: DeserializeOwned>(format: &str, text: &str) -> Result<T> {
    #[derive(Deserialize)]
    struct Header {
        format: String,
        version: u32,
    }
    let header: Header = serde_json::from_str(text)
        .map_err(|e| Error::Artifact(format!("unreadable header: {e}")))?;
    if header.format != format {
        return Err(Error::Artifact(format!(
            "expected a `{format}` artifact, found `{}`",
            header.format
        )));
    }
    if header.version != ARTIFACT_VERSION {
        return Err(Error::Artifact(format!(
            "`{format}` version {} is not supported (this build reads version {ARTIFACT_VERSION})",
            header.version
        )));
    }
    let env: Envelope<T> = serde_json::from_str(text)
        .map_err(|e| Error::Artifact(format!("corrupt `{format}` payload: {e}")))?;
    Ok(env.payload)
}

pub fn save<T: Serialize>(path: &Path, format: &str, payload: &T) -> Result<()> {
    std::fs::write(path, to_json(format, payload)).map_err(|e| Error::io(path, e))
}

pub fn load<T: DeserializeOwned>(path: &Path, format: &str) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    from_json(format, &text)
}

/// A standardize-then-whiten transform fitted outside cross-validation, for
/// use as a preprocessing step in other pipelines. No confound model is
/// included.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StandaloneWhitener {
    pub feature_names: Vec<String>,
    pub manifest_hash: String,
    pub scaler: FittedScaler,
    pub whitener: FittedWhitener,
}

impl StandaloneWhitener {
    pub fn fit(table: &FeatureTable, manifest: &PairManifest) -> Result<Self> {
        let scaler = FittedScaler::fit(table.features(), table.feature_names())?;
        let x = scaler.transform(table.features())?;
        Ok(Self {
            feature_names: table.feature_names().to_vec(),
            manifest_hash: manifest.content_hash(),
            scaler,
            whitener: FittedWhitener::fit(&x, manifest)?,
        })
    }

    /// Returns `table` with its features standardized and whitened.
    pub fn apply(&self, table: &FeatureTable) -> Result<FeatureTable> {
        if table.feature_names() != self.feature_names.as_slice() {
            return Err(Error::Shape {
                expected: format!(
                    "the {} feature columns the whitener was fitted on",
                    self.feature_names.len()
                ),
                found: format!(
                    "{} differently named or ordered columns",
                    table.n_features()
                ),
            });
        }
        let x = self.scaler.transform(table.features())?;
        table.with_features(self.whitener.transform(&x)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        save(path, WHITENER_FORMAT, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        load(path, WHITENER_FORMAT)
    }
}
