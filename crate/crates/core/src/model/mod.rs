//! Encoder, decoder and the training objective.

pub mod config;
pub mod elbo;
pub mod networks;

pub use config::{DecoderConfig, EncoderConfig, FeedForward, ImagePreproc, TemporalConv};
pub use elbo::{
    draw_noise, elbo, elbo_and_gradient, elbo_on_tape, elbo_with_noise, gaussian_log_likelihood,
    ElboBreakdown, ElboVars,
};
pub use networks::{DgpVae, PosteriorVars};
