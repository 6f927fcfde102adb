//! Grouping observed features into concepts before scoring.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::scores::ImportanceMatrix;
use crate::error::{Error, Result};

/// Assignment of each observed feature to exactly one concept group.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConceptMap {
    /// Group names in first-appearance order.
    pub groups: Vec<String>,
    /// Feature name → index into `groups`.
    pub assignment: BTreeMap<String, usize>,
}

#[derive(Deserialize)]
struct Row {
    feature: String,
    concept: String,
}

impl ConceptMap {
    pub fn from_pairs<S: AsRef<str>>(pairs: &[(S, S)]) -> Result<Self> {
        let mut groups: Vec<String> = Vec::new();
        let mut assignment = BTreeMap::new();
        for (feature, concept) in pairs {
            let (feature, concept) = (feature.as_ref(), concept.as_ref());
            let g = match groups.iter().position(|c| c == concept) {
                Some(g) => g,
                None => {
                    groups.push(concept.to_owned());
                    groups.len() - 1
                }
            };
            if assignment.insert(feature.to_owned(), g).is_some() {
                return Err(Error::Config(format!("feature `{feature}` is mapped more than once")));
            }
        }
        Ok(Self { groups, assignment })
    }

    /// Reads a two-column `feature,concept` CSV with a header row.
    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut reader = csv::Reader::from_path(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let mut pairs = Vec::new();
        for row in reader.deserialize::<Row>() {
            let row = row.map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
            pairs.push((row.feature, row.concept));
        }
        Self::from_pairs(&pairs)
    }

    /// Every feature mapped to its own group.
    pub fn singletons(features: &[String]) -> Self {
        Self {
            groups: features.to_vec(),
            assignment: features.iter().enumerate().map(|(i, f)| (f.clone(), i)).collect(),
        }
    }
}

/// Latent × concept importance: each concept column is the normalized sum
/// of its member features' normalized columns.
pub fn grouped_importance(features: &ImportanceMatrix, map: &ConceptMap) -> Result<ImportanceMatrix> {
    let unmapped: Vec<&str> = features
        .factor_names
        .iter()
        .filter(|f| !map.assignment.contains_key(*f))
        .map(String::as_str)
        .collect();
    if !unmapped.is_empty() {
        return Err(Error::Config(format!("features without a concept: {}", unmapped.join(", "))));
    }
    let mut normalized = features.clone();
    normalized.normalize_columns();
    let (m, g) = (features.latents, map.groups.len());
    let mut values = vec![0.0; m * g];
    for (j, name) in features.factor_names.iter().enumerate() {
        let group = map.assignment[name];
        for i in 0..m {
            values[i * g + group] += normalized.get(i, j);
        }
    }
    let mut grouped = ImportanceMatrix::with_names(m, g, values, map.groups.clone())?;
    grouped.normalize_columns();
    Ok(grouped)
}
