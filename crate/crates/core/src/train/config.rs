//! Run configuration.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autodiff::AdamConfig;
use crate::error::{Error, Result};
use crate::model::{DecoderConfig, EncoderConfig, FeedForward, ImagePreproc, TemporalConv};
use crate::synth::Corpus;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubsectionMode {
    /// Non-overlapping tiles from offset 0; a remainder shorter than the
    /// subsection is not trained on.
    #[default]
    Sequential,
    /// The same number of windows per series, at uniformly random offsets.
    RandomCrop,
}

/// Network sizes; input and output widths come from the corpus.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSection {
    pub latent_dim: usize,
    pub temporal_conv: TemporalConv,
    pub encoder_feedforward: FeedForward,
    pub decoder_feedforward: FeedForward,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_preproc: Option<ImagePreproc>,
    #[serde(default = "one")]
    pub observation_variance: f64,
    /// Ablation: mean-field posterior (no superdiagonal).
    #[serde(default)]
    pub zero_superdiag: bool,
}

fn one() -> f64 {
    1.0
}

pub const DEFAULT_PRIOR_JITTER: f64 = 1e-3;

fn default_prior_jitter() -> f64 {
    DEFAULT_PRIOR_JITTER
}

fn one_sample() -> usize {
    1
}

fn default_adam() -> AdamConfig {
    AdamConfig::default()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub corpus: PathBuf,
    pub output_dir: PathBuf,
    pub seed: u64,
    pub beta: f64,
    pub batch_size: usize,
    pub subsection_length: usize,
    #[serde(default)]
    pub subsection_mode: SubsectionMode,
    pub epochs: usize,
    /// Cauchy length scales, assigned to latent channels round-robin.
    pub length_scales: Vec<f64>,
    /// Cauchy kernel variance shared by every channel.
    #[serde(default = "one")]
    pub prior_variance: f64,
    /// Diagonal jitter the prior Gram matrices start from. Cauchy Grams at
    /// long length scales are nearly singular, and a tiny jitter lets
    /// `K⁻¹` (and hence the KL) reach ~1/jitter.
    #[serde(default = "default_prior_jitter")]
    pub prior_jitter: f64,
    #[serde(default = "one_sample")]
    pub mc_samples: usize,
    /// Optimizer settings; the learning rate lives here.
    #[serde(default = "default_adam")]
    pub adam: AdamConfig,
    pub model: ModelSection,
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// SHA-256 of the canonical TOML serialization, hex encoded. The output
    /// directory is blanked first: it says where a run lives, not what it is.
    pub fn hash(&self) -> Result<String> {
        let canonical = Self {
            output_dir: PathBuf::new(),
            ..self.clone()
        };
        Ok(hex::encode(Sha256::digest(canonical.to_toml_string()?.as_bytes())))
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.epochs == 0 {
            return fail("epochs must be ≥ 1".into());
        }
        if !(self.beta >= 0.0) || !self.beta.is_finite() {
            return fail(format!("beta must be ≥ 0, got {}", self.beta));
        }
        if !(self.adam.lr > 0.0) {
            return fail(format!("learning rate must be positive, got {}", self.adam.lr));
        }
        if self.batch_size == 0 || self.subsection_length == 0 || self.mc_samples == 0 {
            return fail("batch_size, subsection_length and mc_samples must be ≥ 1".into());
        }
        if self.length_scales.is_empty() || self.length_scales.iter().any(|l| !(*l > 0.0) || !l.is_finite()) {
            return fail(format!("length_scales must be non-empty and positive: {:?}", self.length_scales));
        }
        if !(self.prior_jitter > 0.0) {
            return fail(format!("prior_jitter must be positive, got {}", self.prior_jitter));
        }
        if !(self.prior_variance > 0.0) {
            return fail(format!("prior_variance must be positive, got {}", self.prior_variance));
        }
        if self.model.latent_dim == 0 {
            return fail("latent_dim must be ≥ 1".into());
        }
        Ok(())
    }

    /// Checks the config against a corpus and resolves the network configs.
    pub fn resolve(&self, corpus: &Corpus) -> Result<(EncoderConfig, DecoderConfig)> {
        self.validate()?;
        if self.subsection_length > corpus.series_length() {
            return Err(Error::Config(format!(
                "subsection_length {} exceeds series length {}",
                self.subsection_length,
                corpus.series_length()
            )));
        }
        let d = corpus.obs_dim();
        let encoder = EncoderConfig {
            input_dim: d,
            image_preproc: self.model.image_preproc.clone(),
            temporal_conv: self.model.temporal_conv.clone(),
            feedforward: self.model.encoder_feedforward.clone(),
            latent_dim: self.model.latent_dim,
            series_length: self.subsection_length,
            zero_superdiag: self.model.zero_superdiag,
        };
        let decoder = DecoderConfig {
            feedforward: self.model.decoder_feedforward.clone(),
            output_dim: d,
            observation_variance: self.model.observation_variance,
        };
        encoder.validate()?;
        decoder.validate()?;
        Ok((encoder, decoder))
    }

    pub fn channel_length_scales(&self) -> Vec<f64> {
        channel_length_scales(&self.length_scales, self.model.latent_dim)
    }
}

/// Round-robin assignment: channel `j` gets `scales[j mod len]`.
pub fn channel_length_scales(scales: &[f64], channels: usize) -> Vec<f64> {
    (0..channels).map(|j| scales[j % scales.len()]).collect()
}
