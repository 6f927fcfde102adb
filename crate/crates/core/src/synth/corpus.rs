//! On-disk corpora: configuration, generation, and the ingestion format.

use std::ops::Range;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::factors::{sample_factor_traces, Cardinality, FactorSpec, FactorTrace};
use super::labels::Labeler;
use super::render::{render_lookup, render_mixer, IngestedDataset, Mixer, MixerSpec};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::io::{read_f64_le, read_json, read_u32_le, write_bytes, write_f64_le, write_json, write_u32_le};
use crate::rng::stream;

pub const METADATA: &str = "metadata.json";
pub const OBSERVATIONS: &str = "observations.bin";
pub const TRACES: &str = "traces.bin";
pub const FACTOR_INDICES: &str = "factor_indices.bin";
pub const LABELS: &str = "labels.bin";
pub const FORMAT_VERSION: u32 = 1;

const TRACE_STREAM: u64 = 1;
const NOISE_STREAM: u64 = 2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Renderer {
    Mixer(MixerSpec),
    /// Frame lookup into an ingested dataset directory.
    Lookup { dataset: PathBuf },
}

fn default_train_fraction() -> f64 {
    0.8
}

/// Everything needed to regenerate a corpus bit-for-bit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusConfig {
    pub seed: u64,
    pub n_series: usize,
    pub series_length: usize,
    #[serde(default = "default_train_fraction")]
    pub train_fraction: f64,
    pub factors: Vec<FactorSpec>,
    pub renderer: Renderer,
    #[serde(default)]
    pub labeler: Option<Labeler>,
}

impl CorpusConfig {
    /// Desk-scale default: 500 series of length 100, three factors with
    /// length scales 2, 10 and 50, rendered by a 12-dimensional mixer.
    pub fn desk_default(seed: u64) -> Self {
        let factors = [2.0, 10.0, 50.0]
            .iter()
            .enumerate()
            .map(|(i, &l)| FactorSpec::rbf_with_constant(format!("factor_{i}"), 10, l, 0.9))
            .collect::<Result<Vec<_>>>()
            .expect("default factor specs are valid");
        Self {
            seed,
            n_series: 500,
            series_length: 100,
            train_fraction: default_train_fraction(),
            factors,
            renderer: Renderer::Mixer(MixerSpec {
                seed: seed.wrapping_add(1),
                output_dim: 12,
                hidden: 16,
                noise_std: 0.1,
                bypass: false,
            }),
            labeler: Some(Labeler::default()),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_series == 0 || self.series_length == 0 {
            return Err(Error::Config("n_series and series_length must be ≥ 1".into()));
        }
        if self.factors.is_empty() {
            return Err(Error::Config("at least one factor is required".into()));
        }
        if !(0.0..=1.0).contains(&self.train_fraction) {
            return Err(Error::Config(format!("train_fraction {} not in [0, 1]", self.train_fraction)));
        }
        for f in &self.factors {
            f.validate()?;
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
    All,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitRanges {
    pub train: Range<usize>,
    pub test: Range<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusMetadata {
    pub format_version: u32,
    pub factor_names: Vec<String>,
    pub cardinalities: Vec<Cardinality>,
    pub n_series: usize,
    pub series_length: usize,
    /// Shape of one observation; the flattened size is the model input width.
    pub obs_shape: Vec<usize>,
    pub dtype: String,
    pub index_dtype: String,
    /// `observations.bin` is N×T×d, `traces.bin` N×k×T, `factor_indices.bin`
    /// N×k×T (zero rows for continuous factors), `labels.bin` N bytes.
    pub splits: SplitRanges,
    pub seed: u64,
    pub has_labels: bool,
    pub config: CorpusConfig,
}

/// A corpus held in memory.
#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    pub metadata: CorpusMetadata,
    pub observations: Vec<f64>,
    pub traces: Vec<f64>,
    pub factor_indices: Vec<u32>,
    pub labels: Option<Vec<u8>>,
}

impl Corpus {
    pub fn n_series(&self) -> usize {
        self.metadata.n_series
    }

    pub fn series_length(&self) -> usize {
        self.metadata.series_length
    }

    pub fn obs_dim(&self) -> usize {
        self.metadata.obs_shape.iter().product()
    }

    pub fn num_factors(&self) -> usize {
        self.metadata.factor_names.len()
    }

    /// Observations of series `i`, `(T, d)` row-major.
    pub fn series(&self, i: usize) -> &[f64] {
        let n = self.series_length() * self.obs_dim();
        &self.observations[i * n..(i + 1) * n]
    }

    /// Continuous trace of factor `f` in series `i`.
    pub fn trace(&self, i: usize, f: usize) -> &[f64] {
        let t = self.series_length();
        let start = (i * self.num_factors() + f) * t;
        &self.traces[start..start + t]
    }

    /// Quantized trace of factor `f` in series `i` (zeros for continuous factors).
    pub fn indices(&self, i: usize, f: usize) -> &[u32] {
        let t = self.series_length();
        let start = (i * self.num_factors() + f) * t;
        &self.factor_indices[start..start + t]
    }

    pub fn factor_trace(&self, i: usize) -> FactorTrace {
        let k = self.num_factors();
        FactorTrace {
            continuous: (0..k).map(|f| self.trace(i, f).to_vec()).collect(),
            indices: (0..k)
                .map(|f| match self.metadata.cardinalities[f] {
                    Cardinality::Discrete(_) => self.indices(i, f).to_vec(),
                    Cardinality::Continuous(_) => Vec::new(),
                })
                .collect(),
        }
    }

    pub fn split_indices(&self, split: Split) -> Range<usize> {
        match split {
            Split::Train => self.metadata.splits.train.clone(),
            Split::Test => self.metadata.splits.test.clone(),
            Split::All => 0..self.n_series(),
        }
    }

    /// `(n, T, d)` tensor of the selected series.
    pub fn observations_tensor(&self, series: &[usize]) -> Result<Tensor> {
        let mut data = Vec::with_capacity(series.len() * self.series_length() * self.obs_dim());
        for &i in series {
            if i >= self.n_series() {
                return Err(Error::Data(format!("series {i} out of range for {} series", self.n_series())));
            }
            data.extend_from_slice(self.series(i));
        }
        Tensor::new(vec![series.len(), self.series_length(), self.obs_dim()], data)
    }

    /// Computes labels from the ground-truth traces and stores them.
    pub fn attach_outcome_labels(&mut self, labeler: &Labeler) -> Result<()> {
        if self.traces.is_empty() {
            return Err(Error::Data("corpus has no factor traces to label from".into()));
        }
        let traces: Vec<FactorTrace> = (0..self.n_series()).map(|i| self.factor_trace(i)).collect();
        self.labels = Some(labeler.label(&traces)?);
        self.metadata.has_labels = true;
        self.metadata.config.labeler = Some(labeler.clone());
        Ok(())
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_f64_le(&dir.join(OBSERVATIONS), &self.observations)?;
        write_f64_le(&dir.join(TRACES), &self.traces)?;
        write_u32_le(&dir.join(FACTOR_INDICES), &self.factor_indices)?;
        match &self.labels {
            Some(labels) => write_bytes(&dir.join(LABELS), labels)?,
            None => {
                let path = dir.join(LABELS);
                if path.exists() {
                    std::fs::remove_file(&path).map_err(|e| Error::io(&path, e))?;
                }
            }
        }
        write_json(&dir.join(METADATA), &self.metadata)
    }

    /// Reads a corpus directory and checks every file against the metadata.
    pub fn load(dir: &Path) -> Result<Self> {
        let metadata: CorpusMetadata = read_json(&dir.join(METADATA))?;
        if metadata.format_version != FORMAT_VERSION {
            return Err(Error::Data(format!(
                "{}: unsupported corpus format version {}",
                dir.display(),
                metadata.format_version
            )));
        }
        let observations = read_f64_le(&dir.join(OBSERVATIONS))?;
        let traces = read_f64_le(&dir.join(TRACES))?;
        let factor_indices = read_u32_le(&dir.join(FACTOR_INDICES))?;
        let labels = if metadata.has_labels {
            let path = dir.join(LABELS);
            Some(std::fs::read(&path).map_err(|e| Error::io(&path, e))?)
        } else {
            None
        };
        let corpus = Self {
            metadata,
            observations,
            traces,
            factor_indices,
            labels,
        };
        corpus.check(dir)?;
        Ok(corpus)
    }

    fn check(&self, dir: &Path) -> Result<()> {
        let m = &self.metadata;
        let (n, t, k) = (m.n_series, m.series_length, m.factor_names.len());
        let mismatch = |what: &str, got: usize, want: usize| {
            Error::Data(format!(
                "{}: {what} has {got} values, metadata implies {want}",
                dir.display()
            ))
        };
        if self.observations.len() != n * t * self.obs_dim() {
            return Err(mismatch(OBSERVATIONS, self.observations.len(), n * t * self.obs_dim()));
        }
        if self.traces.len() != n * k * t {
            return Err(mismatch(TRACES, self.traces.len(), n * k * t));
        }
        if self.factor_indices.len() != n * k * t {
            return Err(mismatch(FACTOR_INDICES, self.factor_indices.len(), n * k * t));
        }
        if let Some(labels) = &self.labels {
            if labels.len() != n {
                return Err(mismatch(LABELS, labels.len(), n));
            }
            if labels.iter().any(|&l| l > 1) {
                return Err(Error::Data(format!("{}: labels must be 0 or 1", dir.display())));
            }
        }
        if m.cardinalities.len() != k {
            return Err(Error::Data(format!("{}: cardinalities/factor names disagree", dir.display())));
        }
        for (f, c) in m.cardinalities.iter().enumerate() {
            if let Some(c) = c.discrete() {
                for i in 0..n {
                    if self.indices(i, f).iter().any(|&v| v as usize >= c) {
                        return Err(Error::Data(format!(
                            "{}: factor {f} index out of range in series {i}",
                            dir.display()
                        )));
                    }
                }
            }
        }
        if m.splits.train.end > m.splits.test.start || m.splits.test.end > n {
            return Err(Error::Data(format!("{}: invalid split ranges", dir.display())));
        }
        Ok(())
    }
}

/// Generates a corpus in memory. Traces and observation noise come from
/// separate RNG streams derived from the seed.
pub fn generate_corpus(config: &CorpusConfig) -> Result<Corpus> {
    config.validate()?;
    let (n, t, k) = (config.n_series, config.series_length, config.factors.len());
    let traces = sample_factor_traces(&config.factors, t, n, &mut stream(config.seed, TRACE_STREAM))?;
    let mut noise_rng = stream(config.seed, NOISE_STREAM);

    let (obs_shape, observations) = match &config.renderer {
        Renderer::Mixer(spec) => {
            let mixer = Mixer::new(spec.clone(), k)?;
            let mut obs = Vec::with_capacity(n * t * mixer.output_dim());
            for tr in &traces {
                obs.extend(render_mixer(&mixer, tr, &mut noise_rng)?);
            }
            (vec![mixer.output_dim()], obs)
        }
        Renderer::Lookup { dataset } => {
            let ds = IngestedDataset::load(dataset)?;
            let grid: Vec<Option<usize>> = config.factors.iter().map(|f| f.cardinality.discrete()).collect();
            let expected: Vec<Option<usize>> = ds.cardinalities.iter().map(|&c| Some(c)).collect();
            if grid != expected {
                return Err(Error::Config(format!(
                    "factor cardinalities {grid:?} do not match dataset grid {:?}",
                    ds.cardinalities
                )));
            }
            let mut obs = Vec::with_capacity(n * t * ds.frame_size());
            for tr in &traces {
                obs.extend(render_lookup(&ds, tr)?);
            }
            (ds.frame_shape.clone(), obs)
        }
    };

    let mut flat_traces = Vec::with_capacity(n * k * t);
    let mut flat_indices = Vec::with_capacity(n * k * t);
    for tr in &traces {
        for f in 0..k {
            flat_traces.extend_from_slice(&tr.continuous[f]);
            if tr.indices[f].is_empty() {
                flat_indices.extend(std::iter::repeat_n(0, t));
            } else {
                flat_indices.extend_from_slice(&tr.indices[f]);
            }
        }
    }

    let n_train = ((n as f64) * config.train_fraction).round() as usize;
    let metadata = CorpusMetadata {
        format_version: FORMAT_VERSION,
        factor_names: config.factors.iter().map(|f| f.name.clone()).collect(),
        cardinalities: config.factors.iter().map(|f| f.cardinality).collect(),
        n_series: n,
        series_length: t,
        obs_shape,
        dtype: "f64-le".into(),
        index_dtype: "u32-le".into(),
        splits: SplitRanges {
            train: 0..n_train,
            test: n_train..n,
        },
        seed: config.seed,
        has_labels: false,
        config: config.clone(),
    };
    let mut corpus = Corpus {
        metadata,
        observations,
        traces: flat_traces,
        factor_indices: flat_indices,
        labels: None,
    };
    if let Some(labeler) = &config.labeler {
        corpus.attach_outcome_labels(labeler)?;
    }
    Ok(corpus)
}

/// Generates a corpus and writes it to `dir`.
pub fn build_corpus(config: &CorpusConfig, dir: &Path) -> Result<Corpus> {
    let corpus = generate_corpus(config)?;
    corpus.save(dir)?;
    Ok(corpus)
}
