//! Gauss–Markov variational family with tridiagonal precision.
//!
//! For each latent channel the posterior is `N(m, Λ⁻¹)` with `Λ = BᵀB`
//! and `B` upper bidiagonal: diagonal `d_t > 0`, superdiagonal `s_t` at
//! `(t, t+1)`. Samples, log-determinants and the KL divergence to a GP
//! prior all use bidiagonal solves instead of forming `Λ⁻¹` explicitly.

use std::sync::Arc;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::autodiff::tape::softplus;
use crate::autodiff::tensor::gemm;
use crate::autodiff::{CustomOp, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::kernels::GramMatrix;

/// Lower bound added after the softplus that produces diagonal entries.
pub const DIAG_FLOOR: f64 = 1e-4;

/// Upper bidiagonal factor `B` of the precision.
#[derive(Clone, Debug, PartialEq)]
pub struct BandedCholesky {
    diag: Vec<f64>,
    superdiag: Vec<f64>,
}

impl BandedCholesky {
    pub fn new(diag: Vec<f64>, superdiag: Vec<f64>) -> Result<Self> {
        if diag.is_empty() || superdiag.len() + 1 != diag.len() {
            return Err(Error::Dimension(format!(
                "band needs T ≥ 1 diagonal and T−1 superdiagonal entries, got {} and {}",
                diag.len(),
                superdiag.len()
            )));
        }
        if let Some(d) = diag.iter().find(|d| !(**d > 0.0 && d.is_finite())) {
            return Err(Error::Dimension(format!("band diagonal entry {d} is not positive")));
        }
        Ok(Self { diag, superdiag })
    }

    /// Maps unconstrained diagonal values through `softplus(·) + DIAG_FLOOR`.
    pub fn from_unconstrained(raw_diag: &[f64], superdiag: Vec<f64>) -> Result<Self> {
        Self::new(raw_diag.iter().map(|&r| softplus(r) + DIAG_FLOOR).collect(), superdiag)
    }

    pub fn identity(len: usize) -> Self {
        Self {
            diag: vec![1.0; len],
            superdiag: vec![0.0; len.saturating_sub(1)],
        }
    }

    pub fn len(&self) -> usize {
        self.diag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diag.is_empty()
    }

    pub fn diag(&self) -> &[f64] {
        &self.diag
    }

    pub fn superdiag(&self) -> &[f64] {
        &self.superdiag
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.len();
        let mut b = DMatrix::zeros(n, n);
        for t in 0..n {
            b[(t, t)] = self.diag[t];
            if t + 1 < n {
                b[(t, t + 1)] = self.superdiag[t];
            }
        }
        b
    }

    /// `B⁻¹ rhs` by back-substitution.
    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        bidiag_solve(&self.diag, &self.superdiag, rhs)
    }

    /// `B⁻ᵀ rhs` by forward substitution.
    pub fn solve_transpose(&self, rhs: &[f64]) -> Vec<f64> {
        bidiag_solve_transpose(&self.diag, &self.superdiag, rhs)
    }

    /// `Λ⁻¹ = B⁻¹B⁻ᵀ`, dense.
    pub fn covariance(&self) -> DMatrix<f64> {
        let w = self.inverse_rows();
        let n = self.len();
        let mut cov = vec![0.0; n * n];
        gemm(n, n, n, &w, false, &w, true, &mut cov, false);
        DMatrix::from_row_slice(n, n, &cov)
    }

    /// `B⁻¹` as a row-major buffer.
    fn inverse_rows(&self) -> Vec<f64> {
        let n = self.len();
        let mut w = vec![0.0; n * n];
        for t in (0..n).rev() {
            w[t * n + t] = 1.0 / self.diag[t];
            if t + 1 < n {
                let s = self.superdiag[t] / self.diag[t];
                for c in t + 1..n {
                    w[t * n + c] = -s * w[(t + 1) * n + c];
                }
            }
        }
        w
    }
}

fn bidiag_solve(diag: &[f64], sup: &[f64], rhs: &[f64]) -> Vec<f64> {
    let n = diag.len();
    let mut u = vec![0.0; n];
    for t in (0..n).rev() {
        let carry = if t + 1 < n { sup[t] * u[t + 1] } else { 0.0 };
        u[t] = (rhs[t] - carry) / diag[t];
    }
    u
}

fn bidiag_solve_transpose(diag: &[f64], sup: &[f64], rhs: &[f64]) -> Vec<f64> {
    let n = diag.len();
    let mut u = vec![0.0; n];
    for t in 0..n {
        let carry = if t > 0 { sup[t - 1] * u[t - 1] } else { 0.0 };
        u[t] = (rhs[t] - carry) / diag[t];
    }
    u
}

/// Symmetric tridiagonal matrix stored by its two bands.
#[derive(Clone, Debug, PartialEq)]
pub struct Tridiagonal {
    pub diag: Vec<f64>,
    pub offdiag: Vec<f64>,
}

impl Tridiagonal {
    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.diag.len();
        let mut m = DMatrix::zeros(n, n);
        for t in 0..n {
            m[(t, t)] = self.diag[t];
            if t + 1 < n {
                m[(t, t + 1)] = self.offdiag[t];
                m[(t + 1, t)] = self.offdiag[t];
            }
        }
        m
    }
}

/// `Λ = BᵀB`.
pub fn precision(band: &BandedCholesky) -> Tridiagonal {
    let n = band.len();
    let diag = (0..n)
        .map(|t| {
            let above = if t > 0 { band.superdiag[t - 1].powi(2) } else { 0.0 };
            band.diag[t].powi(2) + above
        })
        .collect();
    let offdiag = (0..n.saturating_sub(1))
        .map(|t| band.diag[t] * band.superdiag[t])
        .collect();
    Tridiagonal { diag, offdiag }
}

/// `log det Λ = 2 Σ_t log d_t`.
pub fn log_det_precision(band: &BandedCholesky) -> f64 {
    2.0 * band.diag.iter().map(|d| d.ln()).sum::<f64>()
}

/// Posterior of one latent channel over `T` steps.
#[derive(Clone, Debug, PartialEq)]
pub struct StructuredGaussian {
    pub mean: Vec<f64>,
    pub band: BandedCholesky,
}

impl StructuredGaussian {
    pub fn new(mean: Vec<f64>, band: BandedCholesky) -> Result<Self> {
        if mean.len() != band.len() {
            return Err(Error::Dimension(format!(
                "mean has {} steps, band has {}",
                mean.len(),
                band.len()
            )));
        }
        Ok(Self { mean, band })
    }

    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }
}

/// `m + B⁻¹ε` for caller-supplied noise.
pub fn sample_with(q: &StructuredGaussian, eps: &[f64]) -> Vec<f64> {
    q.band
        .solve(eps)
        .into_iter()
        .zip(&q.mean)
        .map(|(u, m)| u + m)
        .collect()
}

pub fn sample<R: Rng + ?Sized>(q: &StructuredGaussian, rng: &mut R) -> Vec<f64> {
    let eps: Vec<f64> = (0..q.len()).map(|_| rng.sample(StandardNormal)).collect();
    sample_with(q, &eps)
}

/// Factorized GP prior for one channel: dense `K⁻¹` and `log det K`.
#[derive(Clone, Debug)]
pub struct GpPrior {
    len: usize,
    inverse: Vec<f64>,
    log_det: f64,
}

impl GpPrior {
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn log_det(&self) -> f64 {
        self.log_det
    }
}

impl From<&GramMatrix> for GpPrior {
    fn from(gram: &GramMatrix) -> Self {
        let inv = gram.inverse();
        let n = gram.len();
        let mut inverse = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                // symmetrize away round-off from the two triangular solves
                inverse[i * n + j] = 0.5 * (inv[(i, j)] + inv[(j, i)]);
            }
        }
        Self {
            len: n,
            inverse,
            log_det: gram.log_det(),
        }
    }
}

/// Gradient of the KL with respect to the posterior parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct KlGradient {
    pub mean: Vec<f64>,
    pub diag: Vec<f64>,
    pub superdiag: Vec<f64>,
}

/// `KL(q ‖ N(0, K))`.
pub fn kl_to_gp_prior(q: &StructuredGaussian, prior: &GpPrior) -> Result<f64> {
    check_dims(q, prior)?;
    Ok(kl_raw(&q.mean, &q.band.diag, &q.band.superdiag, prior, false).0)
}

/// KL value together with its gradient.
pub fn kl_to_gp_prior_with_grad(
    q: &StructuredGaussian,
    prior: &GpPrior,
) -> Result<(f64, KlGradient)> {
    check_dims(q, prior)?;
    let (kl, grad) = kl_raw(&q.mean, &q.band.diag, &q.band.superdiag, prior, true);
    Ok((kl, grad.expect("gradient requested")))
}

/// Sum of per-channel KLs; channels are independent under both q and p.
pub fn total_kl(qs: &[StructuredGaussian], priors: &[GpPrior]) -> Result<f64> {
    if qs.len() != priors.len() {
        return Err(Error::Dimension(format!(
            "{} posterior channels but {} priors",
            qs.len(),
            priors.len()
        )));
    }
    qs.iter()
        .zip(priors)
        .map(|(q, p)| kl_to_gp_prior(q, p))
        .sum()
}

fn check_dims(q: &StructuredGaussian, prior: &GpPrior) -> Result<()> {
    if q.len() != prior.len {
        return Err(Error::Dimension(format!(
            "posterior over {} steps, prior over {}",
            q.len(),
            prior.len
        )));
    }
    Ok(())
}

/// KL = ½[tr(K⁻¹WWᵀ) + mᵀK⁻¹m − T + log det K + 2 Σ log d_t], W = B⁻¹.
fn kl_raw(
    mean: &[f64],
    diag: &[f64],
    sup: &[f64],
    prior: &GpPrior,
    with_grad: bool,
) -> (f64, Option<KlGradient>) {
    let n = mean.len();
    let kinv = &prior.inverse;
    let band = BandedCholesky {
        diag: diag.to_vec(),
        superdiag: sup.to_vec(),
    };
    let w = band.inverse_rows();

    // P = K⁻¹W
    let mut p = vec![0.0; n * n];
    gemm(n, n, n, kinv, false, &w, false, &mut p, false);
    let trace: f64 = w.iter().zip(&p).map(|(a, b)| a * b).sum();

    let kinv_m: Vec<f64> = (0..n)
        .map(|i| (0..n).map(|j| kinv[i * n + j] * mean[j]).sum())
        .collect();
    let quad: f64 = mean.iter().zip(&kinv_m).map(|(a, b)| a * b).sum();
    let log_det_q: f64 = diag.iter().map(|d| d.ln()).sum::<f64>() * 2.0;
    let kl = 0.5 * (trace + quad - n as f64 + prior.log_det + log_det_q);

    if !with_grad {
        return (kl, None);
    }
    // ∂/∂B of ½ tr(K⁻¹WWᵀ) is −Wᵀ(K⁻¹W)Wᵀ, read off on the band.
    let mut q = vec![0.0; n * n];
    gemm(n, n, n, &w, true, &p, false, &mut q, false);
    let band_entry = |t: usize, c: usize| -> f64 {
        -(0..n).map(|b| q[t * n + b] * w[c * n + b]).sum::<f64>()
    };
    let gdiag = (0..n).map(|t| band_entry(t, t) + 1.0 / diag[t]).collect();
    let gsup = (0..n.saturating_sub(1)).map(|t| band_entry(t, t + 1)).collect();
    (
        kl,
        Some(KlGradient {
            mean: kinv_m,
            diag: gdiag,
            superdiag: gsup,
        }),
    )
}

/// Strided view of channel `j` of series `b` in a `(N, T, m)` buffer.
fn channel(data: &[f64], b: usize, j: usize, len: usize, m: usize) -> Vec<f64> {
    (0..len).map(|t| data[(b * len + t) * m + j]).collect()
}

fn scatter(out: &mut [f64], values: &[f64], b: usize, j: usize, len: usize, m: usize) {
    for (t, v) in values.iter().enumerate() {
        out[(b * len + t) * m + j] += v;
    }
}

fn batched_dims(op: &'static str, mean: &Tensor, diag: &Tensor, sup: &Tensor) -> Result<(usize, usize, usize)> {
    let s = mean.shape();
    let ok = s.len() == 3
        && s[1] >= 1
        && diag.shape() == s
        && sup.shape() == [s[0], s[1] - 1, s[2]];
    if !ok {
        return Err(Error::shape(
            op,
            format!(
                "mean {:?}, diag {:?}, superdiag {:?}; expected (N,T,m), (N,T,m), (N,T−1,m)",
                s,
                diag.shape(),
                sup.shape()
            ),
        ));
    }
    Ok((s[0], s[1], s[2]))
}

struct SampleOp {
    batch: usize,
    len: usize,
    channels: usize,
}

impl CustomOp for SampleOp {
    fn name(&self) -> &'static str {
        "structured_sample"
    }

    fn backward(&self, inputs: &[&Tensor], output: &Tensor, grad_out: &Tensor) -> Vec<Tensor> {
        let (mean, diag, sup) = (inputs[0], inputs[1], inputs[2]);
        let (nb, n, m) = (self.batch, self.len, self.channels);
        let mut gdiag = Tensor::zeros(diag.shape());
        let mut gsup = Tensor::zeros(sup.shape());
        let mut geps = Tensor::zeros(mean.shape());
        for b in 0..nb {
            for j in 0..m {
                let d = channel(diag.data(), b, j, n, m);
                let s = channel(sup.data(), b, j, n - 1, m);
                let z = channel(output.data(), b, j, n, m);
                let mu = channel(mean.data(), b, j, n, m);
                let u: Vec<f64> = z.iter().zip(&mu).map(|(z, mu)| z - mu).collect();
                let g = channel(grad_out.data(), b, j, n, m);
                // u = B⁻¹ε ⇒ ε̄ = B⁻ᵀū, B̄ = −ε̄ uᵀ on the band
                let lam = bidiag_solve_transpose(&d, &s, &g);
                let gd: Vec<f64> = (0..n).map(|t| -lam[t] * u[t]).collect();
                let gs: Vec<f64> = (0..n - 1).map(|t| -lam[t] * u[t + 1]).collect();
                scatter(gdiag.data_mut(), &gd, b, j, n, m);
                scatter(gsup.data_mut(), &gs, b, j, n - 1, m);
                scatter(geps.data_mut(), &lam, b, j, n, m);
            }
        }
        vec![grad_out.clone(), gdiag, gsup, geps]
    }
}

/// Reparameterized draw `z = m + B⁻¹ε` for every (series, channel).
///
/// All inputs are `(N, T, m)` except `superdiag`, which is `(N, T−1, m)`.
pub fn sample_on_tape(tape: &mut Tape, mean: Var, diag: Var, superdiag: Var, eps: Var) -> Result<Var> {
    let (mv, dv, sv, ev) = (tape.value(mean), tape.value(diag), tape.value(superdiag), tape.value(eps));
    let (nb, n, m) = batched_dims("structured_sample", mv, dv, sv)?;
    if ev.shape() != mv.shape() {
        return Err(Error::shape(
            "structured_sample",
            format!("noise {:?} vs mean {:?}", ev.shape(), mv.shape()),
        ));
    }
    let mut out = mv.clone();
    for b in 0..nb {
        for j in 0..m {
            let u = bidiag_solve(
                &channel(dv.data(), b, j, n, m),
                &channel(sv.data(), b, j, n - 1, m),
                &channel(ev.data(), b, j, n, m),
            );
            scatter(out.data_mut(), &u, b, j, n, m);
        }
    }
    Ok(tape.custom(
        &[mean, diag, superdiag, eps],
        out,
        Box::new(SampleOp {
            batch: nb,
            len: n,
            channels: m,
        }),
    ))
}

struct KlOp {
    batch: usize,
    len: usize,
    channels: usize,
    grads: Vec<KlGradient>,
}

impl CustomOp for KlOp {
    fn name(&self) -> &'static str {
        "structured_kl"
    }

    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, grad_out: &Tensor) -> Vec<Tensor> {
        let (nb, n, m) = (self.batch, self.len, self.channels);
        let scale = grad_out.item();
        let mut gmean = Tensor::zeros(inputs[0].shape());
        let mut gdiag = Tensor::zeros(inputs[1].shape());
        let mut gsup = Tensor::zeros(inputs[2].shape());
        for b in 0..nb {
            for j in 0..m {
                let g = &self.grads[b * m + j];
                let sc = |v: &[f64]| v.iter().map(|x| x * scale).collect::<Vec<_>>();
                scatter(gmean.data_mut(), &sc(&g.mean), b, j, n, m);
                scatter(gdiag.data_mut(), &sc(&g.diag), b, j, n, m);
                scatter(gsup.data_mut(), &sc(&g.superdiag), b, j, n - 1, m);
            }
        }
        vec![gmean, gdiag, gsup]
    }
}

/// Σ over series and channels of `KL(q_{b,j} ‖ prior_j)`, as a scalar node.
pub fn kl_on_tape(
    tape: &mut Tape,
    mean: Var,
    diag: Var,
    superdiag: Var,
    priors: &[Arc<GpPrior>],
) -> Result<Var> {
    let (mv, dv, sv) = (tape.value(mean), tape.value(diag), tape.value(superdiag));
    let (nb, n, m) = batched_dims("structured_kl", mv, dv, sv)?;
    if priors.len() != m || priors.iter().any(|p| p.len != n) {
        return Err(Error::Dimension(format!(
            "structured_kl: {} channels over {} steps, priors {:?}",
            m,
            n,
            priors.iter().map(|p| p.len).collect::<Vec<_>>()
        )));
    }
    let mut total = 0.0;
    let mut grads = Vec::with_capacity(nb * m);
    for b in 0..nb {
        for (j, prior) in priors.iter().enumerate() {
            let (kl, g) = kl_raw(
                &channel(mv.data(), b, j, n, m),
                &channel(dv.data(), b, j, n, m),
                &channel(sv.data(), b, j, n - 1, m),
                prior,
                true,
            );
            total += kl;
            grads.push(g.expect("gradient requested"));
        }
    }
    Ok(tape.custom(
        &[mean, diag, superdiag],
        Tensor::scalar(total),
        Box::new(KlOp {
            batch: nb,
            len: n,
            channels: m,
            grads,
        }),
    ))
}

/// `softplus(raw) + DIAG_FLOOR` on the tape.
pub fn positive_diag(tape: &mut Tape, raw: Var) -> Var {
    let sp = tape.softplus(raw);
    tape.add_scalar(sp, DIAG_FLOOR)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{gram, KernelSpec, DEFAULT_JITTER};
    use crate::rng::seeded;

    fn band(diag: &[f64], sup: &[f64]) -> BandedCholesky {
        BandedCholesky::new(diag.to_vec(), sup.to_vec()).unwrap()
    }

    #[test]
    fn identity_band_gives_identity_precision() {
        let p = precision(&BandedCholesky::identity(4));
        assert_eq!(p.to_dense(), DMatrix::identity(4, 4));
    }

    #[test]
    fn two_by_two_precision_by_hand() {
        let c = 0.7;
        let p = precision(&band(&[1.0, 1.0], &[c])).to_dense();
        let expected = DMatrix::from_row_slice(2, 2, &[1.0, c, c, 1.0 + c * c]);
        assert!((p - expected).amax() < 1e-15);
    }

    #[test]
    fn log_det_by_hand() {
        let v = log_det_precision(&band(&[2.0, 3.0], &[-4.0]));
        assert!((v - 2.0 * (2f64.ln() + 3f64.ln())).abs() < 1e-15);
        assert_eq!(log_det_precision(&BandedCholesky::identity(5)), 0.0);
    }

    #[test]
    fn invalid_bands_rejected() {
        assert!(BandedCholesky::new(vec![1.0, 0.0], vec![0.1]).is_err());
        assert!(BandedCholesky::new(vec![1.0, 1.0], vec![]).is_err());
        assert!(BandedCholesky::new(vec![], vec![]).is_err());
    }

    #[test]
    fn unconstrained_diag_respects_floor() {
        let b = BandedCholesky::from_unconstrained(&[-800.0, 0.0, 3.0], vec![0.0, 0.0]).unwrap();
        assert!(b.diag().iter().all(|&d| d >= DIAG_FLOOR));
    }

    #[test]
    fn zero_noise_returns_mean_and_identity_adds_noise() {
        let q = StructuredGaussian::new(vec![0.5, -1.0, 2.0], band(&[1.5, 0.3, 2.0], &[0.4, -0.2])).unwrap();
        assert_eq!(sample_with(&q, &[0.0; 3]), q.mean);
        let qi = StructuredGaussian::new(vec![0.5, -1.0, 2.0], BandedCholesky::identity(3)).unwrap();
        assert_eq!(sample_with(&qi, &[0.1, 0.2, 0.3]), vec![0.6, -0.8, 2.3]);
    }

    #[test]
    fn scalar_kl_formula() {
        let prior = GpPrior::from(&gram(&KernelSpec::cauchy(1.0, 1.0).unwrap(), 1, 1e-300).unwrap());
        let (mu, s) = (0.7, 0.4);
        let q = StructuredGaussian::new(vec![mu], band(&[1.0 / s], &[])).unwrap();
        let expected = 0.5 * (s * s + mu * mu - 1.0 - (s * s).ln());
        assert!((kl_to_gp_prior(&q, &prior).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn kl_zero_at_prior() {
        // a prior whose precision is itself tridiagonal is exactly representable
        let b = band(&[1.3, 0.9, 1.1], &[0.5, -0.4]);
        let prior = GpPrior {
            len: 3,
            inverse: precision(&b).to_dense().as_slice().to_vec(),
            log_det: b.covariance().determinant().ln(),
        };
        let q = StructuredGaussian::new(vec![0.0; 3], b).unwrap();
        assert!(kl_to_gp_prior(&q, &prior).unwrap().abs() < 1e-12);

        let cauchy = GpPrior::from(&gram(&KernelSpec::cauchy(1.0, 3.0).unwrap(), 6, DEFAULT_JITTER).unwrap());
        let q = StructuredGaussian::new(vec![0.0; 6], BandedCholesky::identity(6)).unwrap();
        assert!(kl_to_gp_prior(&q, &cauchy).unwrap() > 0.0);
    }

    #[test]
    fn dimension_mismatch_is_error() {
        let prior = GpPrior::from(&gram(&KernelSpec::cauchy(1.0, 1.0).unwrap(), 4, DEFAULT_JITTER).unwrap());
        let q = StructuredGaussian::new(vec![0.0; 3], BandedCholesky::identity(3)).unwrap();
        assert!(kl_to_gp_prior(&q, &prior).is_err());
        assert!(total_kl(&[q], &[]).is_err());
    }

    #[test]
    fn covariance_is_dense_despite_tridiagonal_precision() {
        let mut rng = seeded(8);
        let diag: Vec<f64> = (0..5).map(|_| rng.gen_range(0.5..2.0)).collect();
        let sup: Vec<f64> = (0..4).map(|_| rng.gen_range(0.2..1.0)).collect();
        let cov = band(&diag, &sup).covariance();
        assert!(cov[(0, 4)].abs() > 0.0);
    }
}
