//! Per-series outcome prediction from latent summaries.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::rng::seeded;

/// Per-channel time-mean followed by per-channel (population) standard
/// deviation of a `(T, m)` row-major latent series.
pub fn summarize_series(means: &[f64], channels: usize) -> Result<Vec<f64>> {
    if channels == 0 || means.is_empty() || !means.len().is_multiple_of(channels) {
        return Err(Error::Dimension(format!(
            "{} values do not form a (T, {channels}) series",
            means.len()
        )));
    }
    let t = (means.len() / channels) as f64;
    let mut out = vec![0.0; 2 * channels];
    for row in means.chunks(channels) {
        for (c, v) in row.iter().enumerate() {
            out[c] += v / t;
        }
    }
    for row in means.chunks(channels) {
        for (c, v) in row.iter().enumerate() {
            out[channels + c] += (v - out[c]).powi(2) / t;
        }
    }
    for s in &mut out[channels..] {
        *s = s.sqrt();
    }
    Ok(out)
}

/// Summaries of every series in an `(N, T, m)` tensor, as `(N, 2m)`.
pub fn summarize_all(means: &Tensor) -> Result<Tensor> {
    if means.ndim() != 3 {
        return Err(Error::shape("summarize_all", format!("expected (N, T, m), got {:?}", means.shape())));
    }
    let (n, t, m) = (means.shape()[0], means.shape()[1], means.shape()[2]);
    let mut data = Vec::with_capacity(n * 2 * m);
    for series in means.data().chunks(t * m) {
        data.extend(summarize_series(series, m)?);
    }
    Tensor::matrix(n, 2 * m, data)
}

/// Area under the ROC curve by the Mann–Whitney rank statistic; tied
/// scores receive their average rank (count 0.5 per tied pair).
pub fn auroc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Metric(format!("{} scores for {} labels", scores.len(), labels.len())));
    }
    let positives = labels.iter().filter(|&&l| l == 1).count();
    let negatives = labels.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::Metric("AUROC needs both classes".into()));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFinite("classifier scores".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut start = 0;
    while start < order.len() {
        let mut end = start;
        while end + 1 < order.len() && scores[order[end + 1]] == scores[order[start]] {
            end += 1;
        }
        let mid_rank = (start + end) as f64 / 2.0 + 1.0;
        rank_sum += mid_rank * order[start..=end].iter().filter(|&&i| labels[i] == 1).count() as f64;
        start = end + 1;
    }
    let (p, n) = (positives as f64, negatives as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassifierConfig {
    pub train_fraction: f64,
    /// L2 penalty on the weights (not the bias).
    pub l2: f64,
    /// Stop when the training loss changes by less than this between iterations.
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            train_fraction: 0.8,
            l2: 1e-3,
            tolerance: 1e-6,
            max_iterations: 100_000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub auroc: f64,
    /// Weights on standardized features.
    pub weights: Vec<f64>,
    pub bias: f64,
    pub feature_mean: Vec<f64>,
    pub feature_scale: Vec<f64>,
    pub train_series: Vec<usize>,
    pub test_series: Vec<usize>,
    pub seed: u64,
    pub iterations: usize,
    pub final_loss: f64,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Mean log-loss `log(1 + e^{−y'·s})` plus the L2 term.
fn loss(x: &[Vec<f64>], y: &[u8], w: &[f64], b: f64, l2: f64) -> f64 {
    let data: f64 = x
        .iter()
        .zip(y)
        .map(|(row, &label)| {
            let s = b + row.iter().zip(w).map(|(a, c)| a * c).sum::<f64>();
            let signed = if label == 1 { s } else { -s };
            // log(1 + e^{-signed}) evaluated stably.
            (-signed).max(0.0) + (-signed.abs()).exp().ln_1p()
        })
        .sum::<f64>()
        / x.len() as f64;
    data + 0.5 * l2 * w.iter().map(|v| v * v).sum::<f64>()
}

/// Fits an L2-regularized logistic regression by full-batch gradient
/// descent on a seeded series-level split and reports held-out AUROC.
pub fn fit_linear_classifier(
    summaries: &Tensor,
    labels: &[u8],
    config: &ClassifierConfig,
    seed: u64,
) -> Result<EvalReport> {
    if summaries.ndim() != 2 || summaries.shape()[0] != labels.len() {
        return Err(Error::shape(
            "fit_linear_classifier",
            format!("summaries {:?} for {} labels", summaries.shape(), labels.len()),
        ));
    }
    if labels.iter().any(|&l| l > 1) {
        return Err(Error::Data("labels must be 0 or 1".into()));
    }
    let (n, p) = (summaries.shape()[0], summaries.shape()[1]);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seeded(seed));
    let n_train = (n as f64 * config.train_fraction).round() as usize;
    if n_train == 0 || n_train >= n {
        return Err(Error::Data(format!("{n} series cannot be split {}", config.train_fraction)));
    }
    let (train, test) = (order[..n_train].to_vec(), order[n_train..].to_vec());
    let y_train: Vec<u8> = train.iter().map(|&i| labels[i]).collect();
    let y_test: Vec<u8> = test.iter().map(|&i| labels[i]).collect();
    if y_train.iter().all(|&l| l == y_train[0]) {
        return Err(Error::Data("training split contains a single class".into()));
    }

    let row = |i: usize| &summaries.data()[i * p..(i + 1) * p];
    let mut mean = vec![0.0; p];
    let mut scale = vec![0.0; p];
    for &i in &train {
        for (j, v) in row(i).iter().enumerate() {
            mean[j] += v / n_train as f64;
        }
    }
    for &i in &train {
        for (j, v) in row(i).iter().enumerate() {
            scale[j] += (v - mean[j]).powi(2) / n_train as f64;
        }
    }
    for s in &mut scale {
        *s = if *s > 0.0 { s.sqrt() } else { 1.0 };
    }
    let standardize = |i: usize| -> Vec<f64> { row(i).iter().enumerate().map(|(j, v)| (v - mean[j]) / scale[j]).collect() };
    let x_train: Vec<Vec<f64>> = train.iter().map(|&i| standardize(i)).collect();
    let x_test: Vec<Vec<f64>> = test.iter().map(|&i| standardize(i)).collect();

    // Standardized features bound the curvature by (p + 1)/4 + l2.
    let step = 1.0 / (0.25 * (p as f64 + 1.0) + config.l2);
    let mut w = vec![0.0; p];
    let mut b = 0.0;
    let mut current = loss(&x_train, &y_train, &w, b, config.l2);
    let mut iterations = 0;
    while iterations < config.max_iterations {
        let mut gw: Vec<f64> = w.iter().map(|v| config.l2 * v).collect();
        let mut gb = 0.0;
        for (xi, &yi) in x_train.iter().zip(&y_train) {
            let s = b + xi.iter().zip(&w).map(|(a, c)| a * c).sum::<f64>();
            let r = (sigmoid(s) - f64::from(yi)) / n_train as f64;
            gb += r;
            for (g, a) in gw.iter_mut().zip(xi) {
                *g += r * a;
            }
        }
        for (wj, g) in w.iter_mut().zip(&gw) {
            *wj -= step * g;
        }
        b -= step * gb;
        iterations += 1;
        let next = loss(&x_train, &y_train, &w, b, config.l2);
        if !next.is_finite() {
            return Err(Error::NonFinite(format!("classifier loss at iteration {iterations}")));
        }
        let change = (current - next).abs();
        current = next;
        if change < config.tolerance {
            break;
        }
    }

    let scores: Vec<f64> = x_test
        .iter()
        .map(|xi| b + xi.iter().zip(&w).map(|(a, c)| a * c).sum::<f64>())
        .collect();
    Ok(EvalReport {
        auroc: auroc(&scores, &y_test)?,
        weights: w,
        bias: b,
        feature_mean: mean,
        feature_scale: scale,
        train_series: train,
        test_series: test,
        seed,
        iterations,
        final_loss: current,
    })
}
