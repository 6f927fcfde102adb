#![allow(dead_code)]

use dgpvae::autodiff::{Tape, Tensor, Var};
use nalgebra::DMatrix;

/// Norm-wise relative error `‖a − b‖ / max(‖a‖, ‖b‖)`.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    let scale = na.max(nb);
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

/// Central finite differences of a scalar function of several flat inputs.
pub fn finite_difference(
    inputs: &[Tensor],
    step: f64,
    f: &dyn Fn(&[Tensor]) -> f64,
) -> Vec<Vec<f64>> {
    let mut out = Vec::new();
    for i in 0..inputs.len() {
        let mut grads = Vec::with_capacity(inputs[i].numel());
        for k in 0..inputs[i].numel() {
            let mut plus = inputs.to_vec();
            plus[i].data_mut()[k] += step;
            let mut minus = inputs.to_vec();
            minus[i].data_mut()[k] -= step;
            grads.push((f(&plus) - f(&minus)) / (2.0 * step));
        }
        out.push(grads);
    }
    out
}

/// Builds `build(tape, leaves)` and returns its value and reverse-mode
/// gradients with respect to each input.
pub fn tape_gradients(
    inputs: &[Tensor],
    build: &dyn Fn(&mut Tape, &[Var]) -> Var,
) -> (f64, Vec<Vec<f64>>) {
    let mut tape = Tape::new();
    let leaves: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = build(&mut tape, &leaves);
    let value = tape.value(out).item();
    let grads = tape.backward_scalar(out).unwrap();
    let g = leaves
        .iter()
        .zip(inputs)
        .map(|(v, t)| {
            grads
                .get(*v)
                .map(|g| g.data().to_vec())
                .unwrap_or_else(|| vec![0.0; t.numel()])
        })
        .collect();
    (value, g)
}

pub fn tape_value(inputs: &[Tensor], build: &dyn Fn(&mut Tape, &[Var]) -> Var) -> f64 {
    let mut tape = Tape::new();
    let leaves: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = build(&mut tape, &leaves);
    tape.value(out).item()
}

/// Asserts reverse-mode gradients agree with central differences.
pub fn check_gradients(inputs: &[Tensor], tol: f64, build: &dyn Fn(&mut Tape, &[Var]) -> Var) {
    let (_, analytic) = tape_gradients(inputs, build);
    let numeric = finite_difference(inputs, 1e-5, &|xs| tape_value(xs, build));
    for (i, (a, n)) in analytic.iter().zip(&numeric).enumerate() {
        let err = relative_error(a, n);
        assert!(err < tol, "input {i}: relative error {err:e}\nanalytic {a:?}\nnumeric {n:?}");
    }
}

/// Dense multivariate-Gaussian KL(N(m_q, Σ_q) ‖ N(0, Σ_p)) from explicit
/// covariance matrices, using LU inverses and eigenvalue log-determinants.
pub fn dense_gaussian_kl(mean_q: &[f64], cov_q: &DMatrix<f64>, cov_p: &DMatrix<f64>) -> f64 {
    let n = mean_q.len();
    let p_inv = cov_p.clone().lu().try_inverse().expect("prior covariance invertible");
    let m = nalgebra::DVector::from_column_slice(mean_q);
    let trace = (&p_inv * cov_q).trace();
    let quad = (m.transpose() * &p_inv * &m)[(0, 0)];
    0.5 * (trace + quad - n as f64 + eig_log_det(cov_p) - eig_log_det(cov_q))
}

pub fn eig_log_det(m: &DMatrix<f64>) -> f64 {
    let sym = (m + m.transpose()) * 0.5;
    sym.symmetric_eigen().eigenvalues.iter().map(|l| l.ln()).sum()
}

pub fn uniform_tensor(rng: &mut impl rand::Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n: usize = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(lo..hi)).collect()).unwrap()
}

/// Pearson correlation of two equally long samples.
pub fn correlation(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma).powi(2);
        sbb += (y - mb).powi(2);
    }
    sab / (saa * sbb).sqrt()
}

/// Largest absolute pooled correlation between distinct factors' continuous traces.
pub fn max_factor_correlation(traces: &[dgpvae::synth::FactorTrace]) -> f64 {
    let k = traces[0].num_factors();
    let pooled: Vec<Vec<f64>> = (0..k)
        .map(|f| traces.iter().flat_map(|t| t.continuous[f].iter().copied()).collect())
        .collect();
    let mut worst: f64 = 0.0;
    for a in 0..k {
        for b in a + 1..k {
            worst = worst.max(correlation(&pooled[a], &pooled[b]).abs());
        }
    }
    worst
}

/// Mean number of one-step index changes per series, per factor.
pub fn mean_index_changes(traces: &[dgpvae::synth::FactorTrace]) -> Vec<f64> {
    let k = traces[0].num_factors();
    (0..k)
        .map(|f| {
            let total: usize = traces
                .iter()
                .map(|t| t.indices[f].windows(2).filter(|w| w[0] != w[1]).count())
                .sum();
            total as f64 / traces.len() as f64
        })
        .collect()
}

/// Fraction of steps at which at least two factors change index together.
pub fn dense_change_fraction(traces: &[dgpvae::synth::FactorTrace]) -> f64 {
    let (mut dense, mut steps) = (0usize, 0usize);
    for t in traces {
        for s in 1..t.len() {
            let changed = t.indices.iter().filter(|row| row[s] != row[s - 1]).count();
            dense += usize::from(changed >= 2);
            steps += 1;
        }
    }
    dense as f64 / steps as f64
}

/// Two-factor corpus rendered by the identity mixer (observations are the factors).
pub fn identity_corpus_config(seed: u64, n: usize, t: usize) -> dgpvae::synth::CorpusConfig {
    use dgpvae::synth::{CorpusConfig, FactorSpec, Labeler, MixerSpec, Renderer};
    CorpusConfig {
        seed,
        n_series: n,
        series_length: t,
        train_fraction: 0.8,
        factors: vec![
            FactorSpec::rbf_with_constant("fast", 5, 2.0, 0.9).unwrap(),
            FactorSpec::rbf_with_constant("slow", 5, 10.0, 0.9).unwrap(),
        ],
        renderer: Renderer::Mixer(MixerSpec {
            seed,
            output_dim: 2,
            hidden: 0,
            noise_std: 0.0,
            bypass: true,
        }),
        labeler: Some(Labeler::default()),
    }
}

/// Small network trained for a few epochs on subsections of length 10.
pub fn toy_run_config(corpus: &std::path::Path, output: &std::path::Path, seed: u64) -> dgpvae::train::RunConfig {
    use dgpvae::autodiff::AdamConfig;
    use dgpvae::model::{FeedForward, TemporalConv};
    use dgpvae::train::{ModelSection, RunConfig, SubsectionMode};
    RunConfig {
        corpus: corpus.to_path_buf(),
        output_dir: output.to_path_buf(),
        seed,
        beta: 1.0,
        batch_size: 8,
        subsection_length: 10,
        subsection_mode: SubsectionMode::Sequential,
        epochs: 3,
        length_scales: vec![2.0, 10.0],
        prior_variance: 1.0,
        prior_jitter: dgpvae::train::DEFAULT_PRIOR_JITTER,
        mc_samples: 1,
        adam: AdamConfig {
            lr: 1e-2,
            ..AdamConfig::default()
        },
        model: ModelSection {
            latent_dim: 2,
            temporal_conv: TemporalConv {
                filters: 8,
                filter_width: 3,
            },
            encoder_feedforward: FeedForward { layers: 1, width: 16 },
            decoder_feedforward: FeedForward { layers: 1, width: 16 },
            image_preproc: None,
            observation_variance: 0.1,
            zero_superdiag: false,
        },
    }
}
