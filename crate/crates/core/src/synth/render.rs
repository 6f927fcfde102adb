//! Turning factor traces into observations, point-wise in time.

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::factors::FactorTrace;
use crate::error::{Error, Result};
use crate::io::{read_f64_le, read_json, read_u32_le, write_f64_le, write_json, write_u32_le};
use crate::rng::seeded;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixerSpec {
    pub seed: u64,
    pub output_dim: usize,
    pub hidden: usize,
    pub noise_std: f64,
    /// Identity map; requires `output_dim` equal to the factor count.
    #[serde(default)]
    pub bypass: bool,
}

/// Fixed random map `x = W₂ tanh(W₁c + b₁) + b₂`, determined by the seed.
#[derive(Clone, Debug, PartialEq)]
pub struct Mixer {
    pub spec: MixerSpec,
    factors: usize,
    w1: Vec<f64>,
    b1: Vec<f64>,
    w2: Vec<f64>,
    b2: Vec<f64>,
}

impl Mixer {
    pub fn new(spec: MixerSpec, factors: usize) -> Result<Self> {
        if spec.output_dim < factors {
            return Err(Error::Config(format!(
                "mixer output_dim {} is smaller than the {} factors",
                spec.output_dim, factors
            )));
        }
        if !(spec.noise_std >= 0.0) {
            return Err(Error::Config(format!("noise_std {} must be ≥ 0", spec.noise_std)));
        }
        if spec.bypass && spec.output_dim != factors {
            return Err(Error::Config("bypass mixer needs output_dim == factor count".into()));
        }
        if !spec.bypass && spec.hidden == 0 {
            return Err(Error::Config("mixer hidden width must be ≥ 1".into()));
        }
        let mut rng = seeded(spec.seed);
        let mut normal = |n: usize, scale: f64| -> Vec<f64> {
            (0..n).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect()
        };
        let (h, d) = (spec.hidden, spec.output_dim);
        let w1 = normal(h * factors, 1.5 / (factors as f64).sqrt());
        let b1 = normal(h, 0.5);
        let w2 = normal(d * h, 1.6 / (h as f64).sqrt());
        let b2 = vec![0.0; d];
        Ok(Self {
            spec,
            factors,
            w1,
            b1,
            w2,
            b2,
        })
    }

    pub fn output_dim(&self) -> usize {
        self.spec.output_dim
    }

    /// Noise-free observation for one factor vector.
    pub fn apply(&self, c: &[f64]) -> Vec<f64> {
        if self.spec.bypass {
            return c.to_vec();
        }
        let (h, d, k) = (self.spec.hidden, self.spec.output_dim, self.factors);
        let hidden: Vec<f64> = (0..h)
            .map(|i| {
                let pre: f64 = (0..k).map(|j| self.w1[i * k + j] * c[j]).sum::<f64>() + self.b1[i];
                pre.tanh()
            })
            .collect();
        (0..d)
            .map(|o| (0..h).map(|i| self.w2[o * h + i] * hidden[i]).sum::<f64>() + self.b2[o])
            .collect()
    }
}

/// Observations `(T, d)` row-major: `x_t = f(c_t) + noise`.
pub fn render_mixer<R: Rng + ?Sized>(mixer: &Mixer, trace: &FactorTrace, rng: &mut R) -> Result<Vec<f64>> {
    if trace.num_factors() != mixer.factors {
        return Err(Error::Dimension(format!(
            "trace has {} factors, mixer expects {}",
            trace.num_factors(),
            mixer.factors
        )));
    }
    let mut out = Vec::with_capacity(trace.len() * mixer.output_dim());
    for t in 0..trace.len() {
        let mut x = mixer.apply(&trace.at(t));
        if mixer.spec.noise_std > 0.0 {
            for v in &mut x {
                *v += mixer.spec.noise_std * rng.sample::<f64, _>(StandardNormal);
            }
        }
        out.extend(x);
    }
    Ok(out)
}

/// Frames indexed by discrete factor tuples, e.g. a benchmark image set.
#[derive(Clone, Debug, PartialEq)]
pub struct IngestedDataset {
    pub factor_names: Vec<String>,
    pub cardinalities: Vec<usize>,
    pub frame_shape: Vec<usize>,
    pub frames: BTreeMap<Vec<u32>, Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
struct DatasetMetadata {
    factor_names: Vec<String>,
    cardinalities: Vec<usize>,
    frame_shape: Vec<usize>,
    count: usize,
    dtype: String,
    index_dtype: String,
}

impl IngestedDataset {
    pub fn frame_size(&self) -> usize {
        self.frame_shape.iter().product()
    }

    /// Reads `metadata.json`, `index.bin` (count×k `u32`) and `frames.bin`.
    pub fn load(dir: &Path) -> Result<Self> {
        let meta: DatasetMetadata = read_json(&dir.join("metadata.json"))?;
        let index = read_u32_le(&dir.join("index.bin"))?;
        let frames = read_f64_le(&dir.join("frames.bin"))?;
        let k = meta.cardinalities.len();
        let size: usize = meta.frame_shape.iter().product();
        if index.len() != meta.count * k || frames.len() != meta.count * size {
            return Err(Error::Data(format!(
                "{}: tensor files do not match metadata counts",
                dir.display()
            )));
        }
        let map = (0..meta.count)
            .map(|i| (index[i * k..(i + 1) * k].to_vec(), frames[i * size..(i + 1) * size].to_vec()))
            .collect();
        Ok(Self {
            factor_names: meta.factor_names,
            cardinalities: meta.cardinalities,
            frame_shape: meta.frame_shape,
            frames: map,
        })
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let meta = DatasetMetadata {
            factor_names: self.factor_names.clone(),
            cardinalities: self.cardinalities.clone(),
            frame_shape: self.frame_shape.clone(),
            count: self.frames.len(),
            dtype: "f64-le".into(),
            index_dtype: "u32-le".into(),
        };
        let index: Vec<u32> = self.frames.keys().flatten().copied().collect();
        let frames: Vec<f64> = self.frames.values().flatten().copied().collect();
        write_u32_le(&dir.join("index.bin"), &index)?;
        write_f64_le(&dir.join("frames.bin"), &frames)?;
        write_json(&dir.join("metadata.json"), &meta)
    }
}

/// Observations `(T, frame_size)`: the stored frame for each step's tuple.
pub fn render_lookup(dataset: &IngestedDataset, trace: &FactorTrace) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(trace.len() * dataset.frame_size());
    for t in 0..trace.len() {
        let tuple = trace.tuple_at(t);
        if tuple.len() != dataset.cardinalities.len() {
            return Err(Error::Dimension(format!(
                "trace has {} discrete factors, dataset has {}",
                tuple.len(),
                dataset.cardinalities.len()
            )));
        }
        let frame = dataset
            .frames
            .get(&tuple)
            .ok_or_else(|| Error::Data(format!("factor tuple {tuple:?} is not in the dataset")))?;
        out.extend_from_slice(frame);
    }
    Ok(out)
}
