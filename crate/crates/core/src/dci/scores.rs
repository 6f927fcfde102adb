//! Disentanglement and completeness from an importance matrix.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Non-negative `latents × factors` importances, row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImportanceMatrix {
    pub latents: usize,
    pub factors: usize,
    pub values: Vec<f64>,
    /// Column labels (factor or concept names).
    pub factor_names: Vec<String>,
}

impl ImportanceMatrix {
    pub fn new(latents: usize, factors: usize, values: Vec<f64>) -> Result<Self> {
        let names = (0..factors).map(|j| format!("factor_{j}")).collect();
        Self::with_names(latents, factors, values, names)
    }

    pub fn with_names(latents: usize, factors: usize, values: Vec<f64>, factor_names: Vec<String>) -> Result<Self> {
        if latents == 0 || factors == 0 || values.len() != latents * factors {
            return Err(Error::Metric(format!(
                "importance matrix {latents}×{factors} given {} values",
                values.len()
            )));
        }
        if factor_names.len() != factors {
            return Err(Error::Metric(format!("{} names for {factors} columns", factor_names.len())));
        }
        if let Some(v) = values.iter().find(|v| !(**v >= 0.0) || !v.is_finite()) {
            return Err(Error::Metric(format!("importance {v} is not a finite non-negative value")));
        }
        Ok(Self {
            latents,
            factors,
            values,
            factor_names,
        })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let k = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != k) {
            return Err(Error::Metric("ragged importance rows".into()));
        }
        Self::new(rows.len(), k, rows.concat())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.factors + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.factors..(i + 1) * self.factors]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.latents).map(|i| self.get(i, j)).collect()
    }

    /// Rescales every non-zero column to sum to one.
    pub fn normalize_columns(&mut self) {
        for j in 0..self.factors {
            let s: f64 = self.column(j).iter().sum();
            if s > 0.0 {
                for i in 0..self.latents {
                    self.values[i * self.factors + j] /= s;
                }
            }
        }
    }
}

/// Entropy of the distribution proportional to `weights`, in base `base`.
fn normalized_entropy(weights: &[f64], base: usize) -> f64 {
    if base <= 1 {
        return 0.0;
    }
    let total: f64 = weights.iter().sum();
    let h: f64 = weights
        .iter()
        .filter(|&&w| w > 0.0)
        .map(|&w| {
            let p = w / total;
            -p * p.ln()
        })
        .sum();
    h / (base as f64).ln()
}

/// `D = Σᵢ ρᵢ (1 − H_k(Pᵢ·))`, with all-zero rows excluded.
pub fn disentanglement(r: &ImportanceMatrix) -> Result<f64> {
    let total: f64 = r.values.iter().sum();
    if total <= 0.0 {
        return Err(Error::Metric("importance matrix is all zero".into()));
    }
    let mut d = 0.0;
    for i in 0..r.latents {
        let row = r.row(i);
        let s: f64 = row.iter().sum();
        if s > 0.0 {
            d += (s / total) * (1.0 - normalized_entropy(row, r.factors));
        }
    }
    Ok(d)
}

/// Per-factor completeness `1 − H_m(P·ⱼ)`; `None` for all-zero columns.
pub fn completeness_per_factor(r: &ImportanceMatrix) -> Vec<Option<f64>> {
    (0..r.factors)
        .map(|j| {
            let col = r.column(j);
            (col.iter().sum::<f64>() > 0.0).then(|| 1.0 - normalized_entropy(&col, r.latents))
        })
        .collect()
}

/// Mean completeness over factors with a non-zero column.
pub fn completeness(r: &ImportanceMatrix) -> Result<f64> {
    let per: Vec<f64> = completeness_per_factor(r).into_iter().flatten().collect();
    if per.len() < r.factors {
        log::warn!(
            "completeness: {} all-zero factor column(s) excluded",
            r.factors - per.len()
        );
    }
    if per.is_empty() {
        return Err(Error::Metric("importance matrix is all zero".into()));
    }
    Ok(per.iter().sum::<f64>() / per.len() as f64)
}
