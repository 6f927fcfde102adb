//! DCI (disentanglement, completeness, informativeness) evaluation.

mod concepts;
mod importance;
mod scores;

use std::path::Path;

use serde::{Deserialize, Serialize};

pub use concepts::{grouped_importance, ConceptMap};
pub use importance::{
    fit_importance, pool_time_steps, DciConfig, ImportanceFit, Informativeness, PredictorKind, TargetKind,
    LASSO_GRID,
};
pub use scores::{completeness, completeness_per_factor, disentanglement, ImportanceMatrix};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DciScores {
    pub disentanglement: f64,
    pub completeness: f64,
    pub completeness_per_factor: Vec<Option<f64>>,
    pub informativeness: Vec<Informativeness>,
    pub importance: ImportanceMatrix,
    pub predictor: Option<PredictorKind>,
}

impl DciScores {
    /// Scores a bare importance matrix (no predictor errors available).
    pub fn from_matrix(importance: ImportanceMatrix) -> Result<Self> {
        Ok(Self {
            disentanglement: disentanglement(&importance)?,
            completeness: completeness(&importance)?,
            completeness_per_factor: completeness_per_factor(&importance),
            informativeness: Vec::new(),
            importance,
            predictor: None,
        })
    }

    pub fn from_fit(fit: ImportanceFit) -> Result<Self> {
        let mut scores = Self::from_matrix(fit.importance)?;
        scores.informativeness = fit.informativeness;
        scores.predictor = Some(fit.predictor);
        Ok(scores)
    }

    /// Mean informativeness over targets where it is defined.
    pub fn mean_informativeness(&self) -> Option<f64> {
        let defined: Vec<f64> = self.informativeness.iter().filter_map(|i| i.score).collect();
        (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64)
    }

    /// Writes the importance matrix as CSV: one row per latent, one column per factor.
    pub fn write_importance_csv(&self, path: &Path) -> Result<()> {
        let err = |e: csv::Error| Error::Metric(format!("{}: {e}", path.display()));
        let mut w = csv::Writer::from_path(path).map_err(err)?;
        let mut header = vec!["latent".to_owned()];
        header.extend(self.importance.factor_names.iter().cloned());
        w.write_record(&header).map_err(err)?;
        for i in 0..self.importance.latents {
            let mut row = vec![i.to_string()];
            row.extend(self.importance.row(i).iter().map(|v| v.to_string()));
            w.write_record(&row).map_err(err)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}
