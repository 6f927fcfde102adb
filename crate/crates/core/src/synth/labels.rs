//! Per-series binary outcomes computed from the ground-truth factor traces.

use serde::{Deserialize, Serialize};

use super::factors::FactorTrace;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Labeler {
    Constant { value: u8 },
    /// 1 when the time-mean of the factor's continuous trace exceeds `threshold`.
    FactorMeanAbove { factor: usize, threshold: f64 },
    /// Threshold at the median of the factor's trace means across the corpus.
    FactorMeanAboveMedian { factor: usize },
}

impl Default for Labeler {
    fn default() -> Self {
        Labeler::FactorMeanAbove {
            factor: 0,
            threshold: 0.0,
        }
    }
}

fn trace_mean(trace: &FactorTrace, factor: usize) -> Result<f64> {
    let row = trace.continuous.get(factor).ok_or_else(|| {
        Error::Config(format!(
            "labeler factor {factor} out of range for {} factors",
            trace.num_factors()
        ))
    })?;
    if row.is_empty() {
        return Err(Error::Data("cannot label an empty trace".into()));
    }
    Ok(row.iter().sum::<f64>() / row.len() as f64)
}

impl Labeler {
    pub fn label(&self, traces: &[FactorTrace]) -> Result<Vec<u8>> {
        match *self {
            Labeler::Constant { value } => {
                if value > 1 {
                    return Err(Error::Config(format!("constant label {value} is not binary")));
                }
                Ok(vec![value; traces.len()])
            }
            Labeler::FactorMeanAbove { factor, threshold } => traces
                .iter()
                .map(|t| Ok(u8::from(trace_mean(t, factor)? > threshold)))
                .collect(),
            Labeler::FactorMeanAboveMedian { factor } => {
                let means = traces
                    .iter()
                    .map(|t| trace_mean(t, factor))
                    .collect::<Result<Vec<_>>>()?;
                let mut sorted = means.clone();
                sorted.sort_by(f64::total_cmp);
                let median = match sorted.len() {
                    0 => return Ok(Vec::new()),
                    n if n % 2 == 1 => sorted[n / 2],
                    n => 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]),
                };
                Ok(means.iter().map(|&m| u8::from(m > median)).collect())
            }
        }
    }
}
