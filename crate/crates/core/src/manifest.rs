//! Declarations of which feature columns are whitened together.
//!
//! A [`PairManifest`] is an ordered list of [`WhiteningStage`]s. Within a
//! stage the pairs are disjoint, so the stage acts block-diagonally; across
//! stages a feature may be reused (a left GM column pairs with its right
//! homologue in one stage and with its own CSF column in the next).
//!
//! Manifests are written as TOML:
//!
//! ```toml
//! [[stage]]
//! label = "left-right"
//! alpha = 0.3
//! pairs = [
//!     ["L_Amygdala_GM", "R_Amygdala_GM"],
//!     ["L_Amygdala_CSF", "R_Amygdala_CSF"],
//! ]
//!
//! [[stage]]
//! label = "gm-csf"
//! alpha = 1.0
//! pairs = [["L_Amygdala_GM", "L_Amygdala_CSF"]]
//! ```

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use toml::Spanned;

use crate::error::{Error, Result};

/// A feature column, by position and name.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct FeatureId {
    pub index: usize,
    pub name: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WhiteningStage {
    pub label: String,
    pub alpha: f64,
    pub pairs: Vec<(FeatureId, FeatureId)>,
}

impl WhiteningStage {
    fn validate(&self, n_features: usize, context: impl Fn(usize) -> String) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Manifest {
                context: format!("stage `{}`", self.label),
                message: format!("alpha = {} is outside [0, 1]", self.alpha),
            });
        }
        let mut seen: HashMap<usize, usize> = HashMap::new();
        for (k, (a, b)) in self.pairs.iter().enumerate() {
            let err = |message: String| Error::Manifest {
                context: context(k),
                message,
            };
            for f in [a, b] {
                if f.index >= n_features {
                    return Err(err(format!(
                        "feature `{}` has index {} but the table has {} features",
                        f.name, f.index, n_features
                    )));
                }
            }
            if a.index == b.index {
                return Err(err(format!("pair members are identical (`{}`)", a.name)));
            }
            for f in [a, b] {
                if let Some(prev) = seen.insert(f.index, k) {
                    return Err(err(format!(
                        "feature `{}` already appears in pair {} of this stage; pairs must be disjoint",
                        f.name,
                        prev + 1
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Ordered whitening stages over a table with `n_features` columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairManifest {
    stages: Vec<WhiteningStage>,
    n_features: usize,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestDoc<P> {
    #[serde(default = "Vec::new")]
    stage: Vec<StageDoc<P>>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct StageDoc<P> {
    label: String,
    alpha: f64,
    #[serde(default = "Vec::new")]
    pairs: Vec<P>,
}

impl PairManifest {
    /// Validates and wraps `stages`.
    pub fn new(stages: Vec<WhiteningStage>, n_features: usize) -> Result<Self> {
        for (s, stage) in stages.iter().enumerate() {
            stage.validate(n_features, |k| {
                format!("stage {} (`{}`), pair {}", s + 1, stage.label, k + 1)
            })?;
        }
        Ok(Self { stages, n_features })
    }

    /// A manifest with no stages: the identity transform.
    pub fn empty(n_features: usize) -> Self {
        Self {
            stages: Vec::new(),
            n_features,
        }
    }

    /// Parses a TOML manifest, resolving column names against `names`.
    pub fn parse(text: &str, names: &[String]) -> Result<Self> {
        let index = name_index(names)?;
        let doc: ManifestDoc<Spanned<Vec<String>>> =
            toml::from_str(text).map_err(|e| Error::Manifest {
                context: match e.span() {
                    Some(span) => format!("line {}", line_of(text, span.start)),
                    None => "document".into(),
                },
                message: e.message().trim().to_string(),
            })?;

        let mut stages = Vec::with_capacity(doc.stage.len());
        for (s, stage) in doc.stage.into_iter().enumerate() {
            let mut pairs = Vec::with_capacity(stage.pairs.len());
            for (k, spanned) in stage.pairs.iter().enumerate() {
                let line = line_of(text, spanned.span().start);
                let context = || {
                    format!(
                        "stage {} (`{}`), pair {} (line {line})",
                        s + 1,
                        stage.label,
                        k + 1
                    )
                };
                let [a, b] = spanned.get_ref().as_slice() else {
                    return Err(Error::Manifest {
                        context: context(),
                        message: format!("a pair has two names, found {}", spanned.get_ref().len()),
                    });
                };
                let resolve = |name: &String| {
                    index
                        .get(name.as_str())
                        .map(|&i| FeatureId {
                            index: i,
                            name: name.clone(),
                        })
                        .ok_or_else(|| Error::Manifest {
                            context: context(),
                            message: format!("unknown feature `{name}`"),
                        })
                };
                pairs.push((resolve(a)?, resolve(b)?));
            }
            let parsed = WhiteningStage {
                label: stage.label,
                alpha: stage.alpha,
                pairs,
            };
            let lines: Vec<usize> = stage
                .pairs
                .iter()
                .map(|p| line_of(text, p.span().start))
                .collect();
            parsed.validate(names.len(), |k| {
                format!(
                    "stage {} (`{}`), pair {} (line {})",
                    s + 1,
                    parsed.label,
                    k + 1,
                    lines[k]
                )
            })?;
            stages.push(parsed);
        }
        Ok(Self {
            stages,
            n_features: names.len(),
        })
    }

    /// Renders the manifest in the same TOML format accepted by [`parse`](Self::parse).
    pub fn to_toml(&self) -> String {
        let doc = ManifestDoc {
            stage: self
                .stages
                .iter()
                .map(|s| StageDoc {
                    label: s.label.clone(),
                    alpha: s.alpha,
                    pairs: s
                        .pairs
                        .iter()
                        .map(|(a, b)| [a.name.clone(), b.name.clone()])
                        .collect(),
                })
                .collect(),
        };
        toml::to_string(&doc).expect("manifest document is always representable")
    }

    /// Hex SHA-256 of the canonical TOML rendering.
    pub fn content_hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_toml().as_bytes()))
    }

    pub fn stages(&self) -> &[WhiteningStage] {
        &self.stages
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn pair_count(&self) -> usize {
        self.stages.iter().map(|s| s.pairs.len()).sum()
    }

    /// Replaces the alpha of every stage labelled `label`. Returns how many
    /// stages matched.
    pub fn set_alpha(&mut self, label: &str, alpha: f64) -> Result<usize> {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(Error::InvalidAlpha(alpha));
        }
        let mut hits = 0;
        for stage in self.stages.iter_mut().filter(|s| s.label == label) {
            stage.alpha = alpha;
            hits += 1;
        }
        Ok(hits)
    }
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

fn name_index(names: &[String]) -> Result<HashMap<&str, usize>> {
    let mut index = HashMap::with_capacity(names.len());
    for (i, name) in names.iter().enumerate() {
        if index.insert(name.as_str(), i).is_some() {
            return Err(Error::Manifest {
                context: "feature names".into(),
                message: format!("duplicate column name `{name}`"),
            });
        }
    }
    Ok(index)
}

/// Token conventions used to discover hemisphere and tissue pairs from
/// column names such as `L_Amygdala_GM`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NamingConvention {
    pub left_prefix: String,
    pub right_prefix: String,
    pub gm_suffix: String,
    pub csf_suffix: String,
    pub hemisphere_label: String,
    pub tissue_label: String,
    pub hemisphere_alpha: f64,
    pub tissue_alpha: f64,
}

impl Default for NamingConvention {
    fn default() -> Self {
        Self {
            left_prefix: "L_".into(),
            right_prefix: "R_".into(),
            gm_suffix: "_GM".into(),
            csf_suffix: "_CSF".into(),
            hemisphere_label: "left-right".into(),
            tissue_label: "gm-csf".into(),
            hemisphere_alpha: 0.3,
            tissue_alpha: 1.0,
        }
    }
}

/// A feature that found no partner in one or more derived stages.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Unpaired {
    pub name: String,
    pub stages: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DerivedManifest {
    pub manifest: PairManifest,
    pub unpaired: Vec<Unpaired>,
}

/// Builds a two-stage manifest (hemisphere pairs, then tissue pairs) from
/// column names. Columns without a partner pass through unchanged and are
/// listed in [`DerivedManifest::unpaired`].
pub fn derive_manifest_from_naming(
    names: &[String],
    convention: &NamingConvention,
) -> Result<DerivedManifest> {
    let c = convention;
    for (what, tok) in [
        ("left_prefix", &c.left_prefix),
        ("right_prefix", &c.right_prefix),
        ("gm_suffix", &c.gm_suffix),
        ("csf_suffix", &c.csf_suffix),
    ] {
        if tok.is_empty() {
            return Err(Error::Config(format!(
                "naming convention `{what}` is empty"
            )));
        }
    }
    if c.left_prefix == c.right_prefix || c.gm_suffix == c.csf_suffix {
        return Err(Error::Config(
            "naming convention uses the same token for both members of a pair".into(),
        ));
    }
    let index = name_index(names)?;
    let id = |i: usize| FeatureId {
        index: i,
        name: names[i].clone(),
    };

    let mut hemi = Vec::new();
    let mut tissue = Vec::new();
    let mut in_hemi = HashSet::new();
    let mut in_tissue = HashSet::new();
    for (i, name) in names.iter().enumerate() {
        if let Some(rest) = name.strip_prefix(c.left_prefix.as_str()) {
            if let Some(&j) = index.get(format!("{}{rest}", c.right_prefix).as_str()) {
                hemi.push((id(i), id(j)));
                in_hemi.extend([i, j]);
            }
        }
        if let Some(stem) = name.strip_suffix(c.gm_suffix.as_str()) {
            if let Some(&j) = index.get(format!("{stem}{}", c.csf_suffix).as_str()) {
                tissue.push((id(i), id(j)));
                in_tissue.extend([i, j]);
            }
        }
    }

    let unpaired = names
        .iter()
        .enumerate()
        .filter_map(|(i, name)| {
            let mut stages = Vec::new();
            if !in_hemi.contains(&i) {
                stages.push(c.hemisphere_label.clone());
            }
            if !in_tissue.contains(&i) {
                stages.push(c.tissue_label.clone());
            }
            (!stages.is_empty()).then(|| Unpaired {
                name: name.clone(),
                stages,
            })
        })
        .collect();

    let manifest = PairManifest::new(
        vec![
            WhiteningStage {
                label: c.hemisphere_label.clone(),
                alpha: c.hemisphere_alpha,
                pairs: hemi,
            },
            WhiteningStage {
                label: c.tissue_label.clone(),
                alpha: c.tissue_alpha,
                pairs: tissue,
            },
        ],
        names.len(),
    )?;
    Ok(DerivedManifest { manifest, unpaired })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    const GRID: &[&str] = &[
        "L_Amygdala_GM",
        "R_Amygdala_GM",
        "L_Amygdala_CSF",
        "R_Amygdala_CSF",
    ];

    #[test]
    fn parses_single_stage() {
        let text = r#"
[[stage]]
label = "left-right"
alpha = 0.3
pairs = [["L_Amygdala_GM", "R_Amygdala_GM"]]
"#;
        let m = PairManifest::parse(text, &names(GRID)).unwrap();
        assert_eq!(m.stages().len(), 1);
        assert_eq!(m.stages()[0].alpha, 0.3);
        assert_eq!(m.stages()[0].pairs.len(), 1);
        assert_eq!(m.stages()[0].pairs[0].1.index, 1);
    }

    #[test]
    fn rejects_identical_members() {
        let text = r#"
[[stage]]
label = "left-right"
alpha = 0.3
pairs = [["L_Amygdala_GM", "L_Amygdala_GM"]]
"#;
        let err = PairManifest::parse(text, &names(GRID))
            .unwrap_err()
            .to_string();
        assert!(err.contains("identical"), "{err}");
        assert!(err.contains("line 5"), "{err}");
    }

    #[test]
    fn rejects_overlapping_pairs() {
        let text = r#"
[[stage]]
label = "left-right"
alpha = 0.3
pairs = [
    ["L_Amygdala_GM", "R_Amygdala_GM"],
    ["L_Amygdala_GM", "L_Amygdala_CSF"],
]
"#;
        let err = PairManifest::parse(text, &names(GRID))
            .unwrap_err()
            .to_string();
        assert!(err.contains("disjoint"), "{err}");
        assert!(err.contains("pair 2"), "{err}");
    }

    #[test]
    fn rejects_unknown_name_alpha_and_keys() {
        let unknown =
            "[[stage]]\nlabel = \"x\"\nalpha = 1.0\npairs = [[\"L_Amygdala_GM\", \"Nope\"]]\n";
        let err = PairManifest::parse(unknown, &names(GRID))
            .unwrap_err()
            .to_string();
        assert!(err.contains("unknown feature `Nope`"), "{err}");

        let alpha = "[[stage]]\nlabel = \"x\"\nalpha = 1.5\npairs = []\n";
        assert!(PairManifest::parse(alpha, &names(GRID))
            .unwrap_err()
            .to_string()
            .contains("alpha"));

        let extra = "[[stage]]\nlabel = \"x\"\nalpha = 1.0\nweight = 2\npairs = []\n";
        let err = PairManifest::parse(extra, &names(GRID))
            .unwrap_err()
            .to_string();
        assert!(err.contains("weight"), "{err}");

        let triple = "[[stage]]\nlabel = \"x\"\nalpha = 1.0\npairs = [[\"L_Amygdala_GM\", \"R_Amygdala_GM\", \"L_Amygdala_CSF\"]]\n";
        assert!(PairManifest::parse(triple, &names(GRID)).is_err());
    }

    #[test]
    fn derives_full_grid() {
        let d = derive_manifest_from_naming(&names(GRID), &NamingConvention::default()).unwrap();
        let s = d.manifest.stages();
        assert_eq!(s.len(), 2);
        let pair_names = |k: usize| -> Vec<(String, String)> {
            s[k].pairs
                .iter()
                .map(|(a, b)| (a.name.clone(), b.name.clone()))
                .collect()
        };
        assert_eq!(
            pair_names(0),
            vec![
                ("L_Amygdala_GM".into(), "R_Amygdala_GM".into()),
                ("L_Amygdala_CSF".into(), "R_Amygdala_CSF".into()),
            ]
        );
        assert_eq!(
            pair_names(1),
            vec![
                ("L_Amygdala_GM".into(), "L_Amygdala_CSF".into()),
                ("R_Amygdala_GM".into(), "R_Amygdala_CSF".into()),
            ]
        );
        assert!(d.unpaired.is_empty());
        assert_eq!(s[0].alpha, 0.3);
        assert_eq!(s[1].alpha, 1.0);
    }

    #[test]
    fn lone_column_is_reported_once() {
        let d =
            derive_manifest_from_naming(&names(&["L_Amygdala_GM"]), &NamingConvention::default())
                .unwrap();
        assert_eq!(d.manifest.pair_count(), 0);
        assert_eq!(d.unpaired.len(), 1);
        assert_eq!(d.unpaired[0].stages, vec!["left-right", "gm-csf"]);
    }

    #[test]
    fn set_alpha_by_label() {
        let mut m = derive_manifest_from_naming(&names(GRID), &NamingConvention::default())
            .unwrap()
            .manifest;
        assert_eq!(m.set_alpha("left-right", 0.5).unwrap(), 1);
        assert_eq!(m.stages()[0].alpha, 0.5);
        assert_eq!(m.set_alpha("missing", 0.5).unwrap(), 0);
        assert!(m.set_alpha("gm-csf", 2.0).is_err());
    }
}
