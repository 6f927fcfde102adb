mod common;

use std::sync::Arc;

use common::{check_gradients, dense_gaussian_kl, eig_log_det, uniform_tensor};
use dgpvae::autodiff::{Tape, Tensor};
use dgpvae::kernels::{gram, KernelSpec, DEFAULT_JITTER};
use dgpvae::posterior::{
    kl_on_tape, kl_to_gp_prior, log_det_precision, precision, sample, sample_on_tape, total_kl,
    BandedCholesky, GpPrior, StructuredGaussian,
};
use dgpvae::rng::seeded;
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::Rng;

fn random_band(rng: &mut impl Rng, len: usize) -> BandedCholesky {
    let diag = (0..len).map(|_| rng.gen_range(0.3..2.0)).collect();
    let sup = (0..len - 1).map(|_| rng.gen_range(-1.0..1.0)).collect();
    BandedCholesky::new(diag, sup).unwrap()
}

fn random_q(rng: &mut impl Rng, len: usize) -> StructuredGaussian {
    let mean = (0..len).map(|_| rng.gen_range(-1.5..1.5)).collect();
    StructuredGaussian::new(mean, random_band(rng, len)).unwrap()
}

fn dense_covariance(band: &BandedCholesky) -> DMatrix<f64> {
    let b = band.to_dense();
    (b.transpose() * b).try_inverse().unwrap()
}

#[test]
fn precision_matches_dense_product() {
    let mut rng = seeded(10);
    for len in 1..=8 {
        for _ in 0..10 {
            let band = random_band(&mut rng, len);
            let b = band.to_dense();
            let err = (precision(&band).to_dense() - b.transpose() * &b).amax();
            assert!(err < 1e-12);
        }
    }
}

#[test]
fn log_det_matches_eigenvalue_oracle() {
    let mut rng = seeded(11);
    for len in 1..=8 {
        let band = random_band(&mut rng, len);
        let dense = precision(&band).to_dense();
        assert!((log_det_precision(&band) - eig_log_det(&dense)).abs() < 1e-10);
    }
}

#[test]
fn precision_is_positive_definite() {
    let mut rng = seeded(12);
    for len in 1..=12 {
        let band = random_band(&mut rng, len);
        assert!(precision(&band).to_dense().cholesky().is_some());
    }
}

#[test]
fn kl_matches_dense_oracle_for_cauchy_priors() {
    let mut rng = seeded(13);
    for len in 1..=8 {
        for _ in 0..5 {
            let l = rng.gen_range(0.5..3.0);
            let g = gram(&KernelSpec::cauchy(1.0, l).unwrap(), len, DEFAULT_JITTER).unwrap();
            let q = random_q(&mut rng, len);
            let structured = kl_to_gp_prior(&q, &GpPrior::from(&g)).unwrap();
            let dense = dense_gaussian_kl(&q.mean, &dense_covariance(&q.band), &g.matrix());
            assert!((structured - dense).abs() < 1e-8, "T={len}: {structured} vs {dense}");
            assert!(structured >= -1e-9);
        }
    }
}

#[test]
fn total_kl_matches_block_diagonal_oracle() {
    let mut rng = seeded(14);
    let (m, len) = (3, 4);
    let scales = [1.0, 2.5, 7.0];
    let grams: Vec<_> = scales
        .iter()
        .map(|&l| gram(&KernelSpec::cauchy(1.0, l).unwrap(), len, DEFAULT_JITTER).unwrap())
        .collect();
    let priors: Vec<GpPrior> = grams.iter().map(GpPrior::from).collect();
    let qs: Vec<_> = (0..m).map(|_| random_q(&mut rng, len)).collect();

    let n = m * len;
    let mut cov_q = DMatrix::zeros(n, n);
    let mut cov_p = DMatrix::zeros(n, n);
    let mut mean = Vec::with_capacity(n);
    for j in 0..m {
        cov_q
            .view_mut((j * len, j * len), (len, len))
            .copy_from(&dense_covariance(&qs[j].band));
        cov_p
            .view_mut((j * len, j * len), (len, len))
            .copy_from(&grams[j].matrix());
        mean.extend_from_slice(&qs[j].mean);
    }
    let dense = dense_gaussian_kl(&mean, &cov_q, &cov_p);
    let structured = total_kl(&qs, &priors).unwrap();
    assert!((structured - dense).abs() < 1e-8);

    let doubled = total_kl(&[qs[0].clone(), qs[0].clone()], &[priors[0].clone(), priors[0].clone()]).unwrap();
    assert!((doubled - 2.0 * kl_to_gp_prior(&qs[0], &priors[0]).unwrap()).abs() < 1e-12);
}

#[test]
fn monte_carlo_moments_match_dense_inverse() {
    let mut rng = seeded(15);
    let q = StructuredGaussian::new(
        vec![0.3, -0.5, 1.0, 0.0],
        BandedCholesky::new(vec![1.2, 0.8, 1.5, 1.0], vec![0.6, -0.4, 0.7]).unwrap(),
    )
    .unwrap();
    let cov = dense_covariance(&q.band);
    let n = 50_000;
    let draws: Vec<Vec<f64>> = (0..n).map(|_| sample(&q, &mut rng)).collect();
    let mean: Vec<f64> = (0..4)
        .map(|t| draws.iter().map(|d| d[t]).sum::<f64>() / n as f64)
        .collect();
    for t in 0..4 {
        assert!((mean[t] - q.mean[t]).abs() < 0.05);
        for s in 0..4 {
            let c = draws
                .iter()
                .map(|d| (d[t] - mean[t]) * (d[s] - mean[s]))
                .sum::<f64>()
                / (n - 1) as f64;
            assert!((c - cov[(t, s)]).abs() < 0.05, "({t},{s}) {c} vs {}", cov[(t, s)]);
        }
    }
}

fn batched_inputs(rng: &mut impl Rng, nb: usize, len: usize, m: usize) -> [Tensor; 4] {
    let diag = uniform_tensor(rng, &[nb, len, m], 0.4, 1.8);
    [
        uniform_tensor(rng, &[nb, len, m], -1.0, 1.0),
        diag,
        uniform_tensor(rng, &[nb, len - 1, m], -1.0, 1.0),
        uniform_tensor(rng, &[nb, len, m], -1.0, 1.0),
    ]
}

#[test]
fn kl_gradient_matches_finite_differences() {
    let mut rng = seeded(16);
    let priors: Vec<Arc<GpPrior>> = [1.5, 4.0]
        .iter()
        .map(|&l| Arc::new(GpPrior::from(&gram(&KernelSpec::cauchy(1.0, l).unwrap(), 5, DEFAULT_JITTER).unwrap())))
        .collect();
    let [mean, diag, sup, _] = batched_inputs(&mut rng, 2, 5, 2);
    check_gradients(&[mean, diag, sup], 1e-5, &|t, v| {
        kl_on_tape(t, v[0], v[1], v[2], &priors).unwrap()
    });
}

#[test]
fn sample_gradient_matches_finite_differences() {
    let mut rng = seeded(17);
    let inputs = batched_inputs(&mut rng, 2, 4, 3);
    let weights = uniform_tensor(&mut rng, &[2, 4, 3], -1.0, 1.0);
    check_gradients(&inputs, 1e-5, &|t, v| {
        let z = sample_on_tape(t, v[0], v[1], v[2], v[3]).unwrap();
        let w = t.leaf(weights.clone());
        let zw = t.mul(z, w).unwrap();
        let sq = t.square(zw);
        t.sum(sq)
    });
}

#[test]
fn tape_sample_agrees_with_scalar_sample() {
    let mut rng = seeded(18);
    let [mean, diag, sup, eps] = batched_inputs(&mut rng, 1, 5, 1);
    let mut tape = Tape::new();
    let vars: Vec<_> = [&mean, &diag, &sup, &eps].iter().map(|t| tape.leaf((*t).clone())).collect();
    let z = sample_on_tape(&mut tape, vars[0], vars[1], vars[2], vars[3]).unwrap();
    let q = StructuredGaussian::new(
        mean.data().to_vec(),
        BandedCholesky::new(diag.data().to_vec(), sup.data().to_vec()).unwrap(),
    )
    .unwrap();
    let direct = dgpvae::posterior::sample_with(&q, eps.data());
    for (a, b) in tape.value(z).data().iter().zip(&direct) {
        assert!((a - b).abs() < 1e-14);
    }
}

#[test]
fn single_step_series_are_valid() {
    let prior = GpPrior::from(&gram(&KernelSpec::cauchy(1.0, 2.0).unwrap(), 1, DEFAULT_JITTER).unwrap());
    let q = StructuredGaussian::new(vec![0.2], BandedCholesky::new(vec![1.5], vec![]).unwrap()).unwrap();
    let s2 = 1.0 / 2.25;
    let var_p = 1.0 + DEFAULT_JITTER;
    let expected = 0.5 * (s2 / var_p + 0.04 / var_p - 1.0 + var_p.ln() - s2.ln());
    assert!((kl_to_gp_prior(&q, &prior).unwrap() - expected).abs() < 1e-12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn kl_is_non_negative(seed in 0u64..100_000, len in 1usize..10, l in 0.3f64..30.0) {
        let mut rng = seeded(seed);
        let prior = GpPrior::from(&gram(&KernelSpec::cauchy(1.0, l).unwrap(), len, DEFAULT_JITTER).unwrap());
        let q = random_q(&mut rng, len);
        prop_assert!(kl_to_gp_prior(&q, &prior).unwrap() >= -1e-9);
    }
}
