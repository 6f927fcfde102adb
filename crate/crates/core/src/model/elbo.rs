//! β-weighted evidence lower bound.

use std::f64::consts::PI;
use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::posterior::{kl_on_tape, sample_on_tape, GpPrior};

use super::networks::DgpVae;

/// Per-series averages, in nats.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ElboBreakdown {
    pub reconstruction: f64,
    pub kl: f64,
    pub beta: f64,
    pub total: f64,
}

impl ElboBreakdown {
    pub fn new(reconstruction: f64, kl: f64, beta: f64) -> Self {
        Self {
            reconstruction,
            kl,
            beta,
            total: reconstruction - beta * kl,
        }
    }
}

/// `Σ_i [−½ log(2πσ²) − (x_i − μ_i)² / (2σ²)]`.
pub fn gaussian_log_likelihood(x: &[f64], mean: &[f64], variance: f64) -> f64 {
    let norm = -0.5 * (2.0 * PI * variance).ln();
    x.iter()
        .zip(mean)
        .map(|(a, b)| norm - (a - b).powi(2) / (2.0 * variance))
        .sum()
}

/// Nodes of one recorded objective.
#[derive(Clone, Copy, Debug)]
pub struct ElboVars {
    pub total: Var,
    pub reconstruction: Var,
    pub kl: Var,
}

/// One standard-normal tensor shaped `(N, T, m)` per Monte-Carlo sample.
pub fn draw_noise<R: Rng + ?Sized>(
    rng: &mut R,
    batch: usize,
    len: usize,
    latent_dim: usize,
    mc_samples: usize,
) -> Vec<Tensor> {
    (0..mc_samples)
        .map(|_| {
            let data = (0..batch * len * latent_dim)
                .map(|_| rng.sample(StandardNormal))
                .collect();
            Tensor::new(vec![batch, len, latent_dim], data).expect("sized above")
        })
        .collect()
}

/// Records the objective for observations `x` `(N, T, d)` with fixed noise.
///
/// Reconstruction is averaged over Monte-Carlo samples and series; the KL
/// is summed over channels and averaged over series.
pub fn elbo_on_tape(
    model: &DgpVae,
    tape: &mut Tape,
    x: &Tensor,
    priors: &[Arc<GpPrior>],
    beta: f64,
    noise: &[Tensor],
) -> Result<ElboVars> {
    if noise.is_empty() {
        return Err(Error::Usage("elbo needs at least one Monte-Carlo sample".into()));
    }
    let shape = x.shape();
    if shape.len() != 3 {
        return Err(Error::shape("elbo", format!("observations {:?}, expected (N, T, d)", shape)));
    }
    let (n, t, d) = (shape[0], shape[1], shape[2]);
    if d != model.decoder.output_dim {
        return Err(Error::shape(
            "elbo",
            format!("observation dim {} vs decoder output {}", d, model.decoder.output_dim),
        ));
    }
    let m = model.latent_dim();
    let xv = tape.leaf(x.clone());
    let q = model.encode_on_tape(tape, xv)?;
    let target = tape.leaf(x.reshape(&[n * t, d])?);

    let variance = model.decoder.observation_variance;
    let mut recon_terms = Vec::with_capacity(noise.len());
    for eps in noise {
        let ev = tape.leaf(eps.clone());
        let z = sample_on_tape(tape, q.mean, q.diag, q.superdiag, ev)?;
        let z = tape.reshape(z, &[n * t, m])?;
        let mu = model.decode_on_tape(tape, z)?;
        let resid = tape.sub(target, mu)?;
        let sq = tape.square(resid);
        let ss = tape.sum(sq);
        recon_terms.push(ss);
    }
    let mut ss = recon_terms[0];
    for &r in &recon_terms[1..] {
        ss = tape.add(ss, r)?;
    }
    let samples = noise.len() as f64;
    // −½ log(2πσ²)·T·d per series, plus the averaged squared residual term
    let constant = -0.5 * (2.0 * PI * variance).ln() * (t * d) as f64;
    let scaled = tape.scale(ss, -1.0 / (2.0 * variance * samples * n as f64));
    let reconstruction = tape.add_scalar(scaled, constant);

    let kl_sum = kl_on_tape(tape, q.mean, q.diag, q.superdiag, priors)?;
    let kl = tape.scale(kl_sum, 1.0 / n as f64);
    let weighted = tape.scale(kl, -beta);
    let total = tape.add(reconstruction, weighted)?;
    Ok(ElboVars {
        total,
        reconstruction,
        kl,
    })
}

fn breakdown(tape: &Tape, vars: &ElboVars, beta: f64) -> Result<ElboBreakdown> {
    let recon = tape.value(vars.reconstruction).item();
    let kl = tape.value(vars.kl).item();
    if !recon.is_finite() {
        return Err(Error::NonFinite("reconstruction term".into()));
    }
    if !kl.is_finite() {
        return Err(Error::NonFinite("KL term".into()));
    }
    Ok(ElboBreakdown::new(recon, kl, beta))
}

/// Objective value with caller-supplied noise (common random numbers).
pub fn elbo_with_noise(
    model: &DgpVae,
    x: &Tensor,
    priors: &[Arc<GpPrior>],
    beta: f64,
    noise: &[Tensor],
) -> Result<ElboBreakdown> {
    let mut tape = Tape::new();
    let vars = elbo_on_tape(model, &mut tape, x, priors, beta, noise)?;
    breakdown(&tape, &vars, beta)
}

/// Objective value with `mc_samples` fresh reparameterized draws.
pub fn elbo<R: Rng + ?Sized>(
    model: &DgpVae,
    x: &Tensor,
    priors: &[Arc<GpPrior>],
    beta: f64,
    rng: &mut R,
    mc_samples: usize,
) -> Result<ElboBreakdown> {
    if mc_samples == 0 {
        return Err(Error::Usage("mc_samples must be ≥ 1".into()));
    }
    let s = x.shape();
    if s.len() != 3 {
        return Err(Error::shape("elbo", format!("observations {:?}", s)));
    }
    let noise = draw_noise(rng, s[0], s[1], model.latent_dim(), mc_samples);
    elbo_with_noise(model, x, priors, beta, &noise)
}

/// Objective value and gradient of the ELBO, written into `model.params` grads
/// (previous gradients are cleared).
pub fn elbo_and_gradient(
    model: &mut DgpVae,
    x: &Tensor,
    priors: &[Arc<GpPrior>],
    beta: f64,
    noise: &[Tensor],
) -> Result<ElboBreakdown> {
    let mut tape = Tape::new();
    let vars = elbo_on_tape(model, &mut tape, x, priors, beta, noise)?;
    let out = breakdown(&tape, &vars, beta)?;
    let grads = tape.backward_scalar(vars.total)?;
    model.params.zero_grad();
    tape.accumulate_param_grads(&grads, &mut model.params);
    Ok(out)
}
