use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-frame 2-D convolution stack applied before the temporal convolution.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImagePreproc {
    pub layers: usize,
    pub filters: usize,
    pub filter_size: usize,
    pub height: usize,
    pub width: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TemporalConv {
    pub filters: usize,
    pub filter_width: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeedForward {
    pub layers: usize,
    pub width: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    /// Observation size per step (`H·W` in image mode).
    pub input_dim: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_preproc: Option<ImagePreproc>,
    pub temporal_conv: TemporalConv,
    pub feedforward: FeedForward,
    pub latent_dim: usize,
    /// Length of the windows the encoder is trained on.
    pub series_length: usize,
    /// Ablation switch: drop the superdiagonal, leaving a mean-field posterior.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub zero_superdiag: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecoderConfig {
    pub feedforward: FeedForward,
    pub output_dim: usize,
    #[serde(default = "default_obs_variance")]
    pub observation_variance: f64,
}

fn default_obs_variance() -> f64 {
    1.0
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("input_dim", self.input_dim),
            ("latent_dim", self.latent_dim),
            ("series_length", self.series_length),
            ("temporal_conv.filters", self.temporal_conv.filters),
            ("temporal_conv.filter_width", self.temporal_conv.filter_width),
            ("feedforward.width", self.feedforward.width),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("encoder {name} must be ≥ 1")));
            }
        }
        if let Some(img) = &self.image_preproc {
            if img.filters == 0 || img.filter_size == 0 || img.layers == 0 {
                return Err(Error::Config("image_preproc sizes must be ≥ 1".into()));
            }
            if img.height * img.width != self.input_dim {
                return Err(Error::Config(format!(
                    "image {}×{} does not match input_dim {}",
                    img.height, img.width, self.input_dim
                )));
            }
        }
        Ok(())
    }
}

impl DecoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.output_dim == 0 || self.feedforward.width == 0 {
            return Err(Error::Config("decoder sizes must be ≥ 1".into()));
        }
        if !(self.observation_variance > 0.0) {
            return Err(Error::Config(format!(
                "observation_variance must be positive, got {}",
                self.observation_variance
            )));
        }
        Ok(())
    }
}
