use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{gram, sample_gp, GramMatrix, KernelSpec, DEFAULT_JITTER};

/// Number of values a factor takes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Cardinality {
    Discrete(usize),
    Continuous(ContinuousMarker),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ContinuousMarker {
    #[serde(rename = "continuous")]
    Continuous,
}

impl Cardinality {
    pub const CONTINUOUS: Cardinality = Cardinality::Continuous(ContinuousMarker::Continuous);

    pub fn discrete(self) -> Option<usize> {
        match self {
            Cardinality::Discrete(n) => Some(n),
            Cardinality::Continuous(_) => None,
        }
    }
}

/// One ground-truth factor of variation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FactorSpec {
    pub name: String,
    pub cardinality: Cardinality,
    pub kernel: KernelSpec,
}

impl FactorSpec {
    /// Discrete factor driven by `rbf_weight·RBF(l) + (1 − rbf_weight)·Constant`.
    pub fn rbf_with_constant(
        name: impl Into<String>,
        cardinality: usize,
        length_scale: f64,
        rbf_weight: f64,
    ) -> Result<Self> {
        let spec = Self {
            name: name.into(),
            cardinality: Cardinality::Discrete(cardinality),
            kernel: KernelSpec::rbf_plus_constant(length_scale, rbf_weight)?,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.cardinality == Cardinality::Discrete(0) {
            return Err(Error::Config(format!("factor `{}` has cardinality 0", self.name)));
        }
        self.kernel.validate()
    }
}

/// Factor time series of one sequence: `k` rows of `T` values.
#[derive(Clone, Debug, PartialEq)]
pub struct FactorTrace {
    /// `continuous[f][t]`
    pub continuous: Vec<Vec<f64>>,
    /// `indices[f][t]`; empty for continuous factors.
    pub indices: Vec<Vec<u32>>,
}

impl FactorTrace {
    pub fn num_factors(&self) -> usize {
        self.continuous.len()
    }

    pub fn len(&self) -> usize {
        self.continuous.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Continuous factor values at step `t`.
    pub fn at(&self, t: usize) -> Vec<f64> {
        self.continuous.iter().map(|row| row[t]).collect()
    }

    /// Quantized index tuple at step `t` (discrete factors only).
    pub fn tuple_at(&self, t: usize) -> Vec<u32> {
        self.indices.iter().filter(|r| !r.is_empty()).map(|row| row[t]).collect()
    }
}

/// Equal-probability bin of a standard-normal value on a grid of `cardinality`.
pub fn quantize(standardized: f64, cardinality: usize) -> u32 {
    let p = 0.5 * statrs::function::erf::erfc(-standardized / std::f64::consts::SQRT_2);
    ((p * cardinality as f64).floor() as usize).min(cardinality - 1) as u32
}

/// Draws `n` independent factor traces of length `len`.
///
/// Each factor is an independent GP draw; discrete factors are quantized
/// after standardizing by the kernel variance.
pub fn sample_factor_traces<R: rand::Rng + ?Sized>(
    specs: &[FactorSpec],
    len: usize,
    n: usize,
    rng: &mut R,
) -> Result<Vec<FactorTrace>> {
    for s in specs {
        s.validate()?;
    }
    let grams: Vec<GramMatrix> = specs
        .iter()
        .map(|s| gram(&s.kernel, len, DEFAULT_JITTER))
        .collect::<Result<_>>()?;
    let scales: Vec<f64> = specs.iter().map(|s| s.kernel.variance().sqrt()).collect();

    let mut traces = Vec::with_capacity(n);
    for _ in 0..n {
        let mut continuous = Vec::with_capacity(specs.len());
        let mut indices = Vec::with_capacity(specs.len());
        for ((spec, g), scale) in specs.iter().zip(&grams).zip(&scales) {
            let values = sample_gp(g, rng);
            let idx = match spec.cardinality.discrete() {
                Some(c) => values.iter().map(|v| quantize(v / scale, c)).collect(),
                None => Vec::new(),
            };
            continuous.push(values);
            indices.push(idx);
        }
        traces.push(FactorTrace {
            continuous,
            indices,
        });
    }
    Ok(traces)
}
