//! Per-factor predictors and the importance matrix they induce.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::scores::ImportanceMatrix;
use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::rng::seeded;

/// L1 strengths (in standardized units) tried on the validation split,
/// strongest first.
pub const LASSO_GRID: [f64; 5] = [1e-1, 3e-2, 1e-2, 3e-3, 1e-3];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PredictorKind {
    /// Coordinate-descent lasso; importance is the absolute standardized coefficient.
    #[default]
    Lasso,
    /// Gradient-boosted regression stumps; importance is the summed split gain.
    BoostedStumps,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetKind {
    /// Integer-valued factor; informativeness is test accuracy.
    Discrete,
    /// Real-valued target; informativeness is test R².
    Continuous,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DciConfig {
    pub predictor: PredictorKind,
    /// Fraction of the (subsampled) pairs used for fitting.
    pub train_fraction: f64,
    /// Fraction of the fitting pairs held out to pick the L1 strength.
    pub validation_fraction: f64,
    /// Pairs drawn at most; `None` uses every pair.
    pub max_samples: Option<usize>,
    pub boosting_rounds: usize,
    pub boosting_learning_rate: f64,
    pub seed: u64,
}

impl Default for DciConfig {
    fn default() -> Self {
        Self {
            predictor: PredictorKind::Lasso,
            train_fraction: 0.8,
            validation_fraction: 0.2,
            max_samples: Some(10_000),
            boosting_rounds: 50,
            boosting_learning_rate: 0.1,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Informativeness {
    pub name: String,
    pub kind: TargetKind,
    /// Test accuracy (discrete) or R² (continuous); `None` for a constant target.
    pub score: Option<f64>,
    /// Accuracy of always predicting the most frequent training value.
    pub majority_baseline: Option<f64>,
    pub test_mse: Option<f64>,
    /// Selected L1 strength (lasso only).
    pub lambda: Option<f64>,
    /// True when the target was constant and no predictor was fit.
    pub degenerate: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImportanceFit {
    pub importance: ImportanceMatrix,
    pub informativeness: Vec<Informativeness>,
    pub predictor: PredictorKind,
    pub n_train: usize,
    pub n_test: usize,
}

/// Column-major standardized design matrix.
struct Design {
    cols: Vec<Vec<f64>>,
    mean: Vec<f64>,
    scale: Vec<f64>,
}

impl Design {
    fn fit(x: &Tensor, rows: &[usize]) -> Self {
        let m = x.shape()[1];
        let mut mean = vec![0.0; m];
        let mut scale = vec![0.0; m];
        for j in 0..m {
            let n = rows.len() as f64;
            let mu = rows.iter().map(|&r| x.data()[r * m + j]).sum::<f64>() / n;
            let var = rows.iter().map(|&r| (x.data()[r * m + j] - mu).powi(2)).sum::<f64>() / n;
            mean[j] = mu;
            scale[j] = var.sqrt();
        }
        let mut d = Self {
            cols: Vec::new(),
            mean,
            scale,
        };
        d.cols = d.transform(x, rows);
        d
    }

    /// Standardized columns for `rows`; constant features become zero.
    fn transform(&self, x: &Tensor, rows: &[usize]) -> Vec<Vec<f64>> {
        let m = self.mean.len();
        (0..m)
            .map(|j| {
                rows.iter()
                    .map(|&r| {
                        if self.scale[j] > 0.0 {
                            (x.data()[r * m + j] - self.mean[j]) / self.scale[j]
                        } else {
                            0.0
                        }
                    })
                    .collect()
            })
            .collect()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn soft_threshold(v: f64, l: f64) -> f64 {
    if v > l {
        v - l
    } else if v < -l {
        v + l
    } else {
        0.0
    }
}

/// Minimizes `(1/2n)‖y − Xb‖² + λ‖b‖₁` by cyclic coordinate descent on
/// the covariance form. `start` is the warm start.
fn lasso(cols: &[Vec<f64>], y: &[f64], lambda: f64, start: &[f64]) -> Vec<f64> {
    let m = cols.len();
    let n = y.len() as f64;
    let gram: Vec<Vec<f64>> = (0..m).map(|a| (0..m).map(|b| dot(&cols[a], &cols[b]) / n).collect()).collect();
    let xty: Vec<f64> = cols.iter().map(|c| dot(c, y) / n).collect();
    let mut b = start.to_vec();
    for _ in 0..10_000 {
        let mut max_change: f64 = 0.0;
        for j in 0..m {
            if gram[j][j] == 0.0 {
                b[j] = 0.0;
                continue;
            }
            let rho = xty[j] - (0..m).filter(|&l| l != j).map(|l| gram[j][l] * b[l]).sum::<f64>();
            let new = soft_threshold(rho, lambda) / gram[j][j];
            max_change = max_change.max((new - b[j]).abs());
            b[j] = new;
        }
        if max_change < 1e-10 {
            break;
        }
    }
    b
}

fn predict_linear(cols: &[Vec<f64>], b: &[f64]) -> Vec<f64> {
    let n = cols.first().map_or(0, Vec::len);
    (0..n).map(|r| cols.iter().zip(b).map(|(c, w)| c[r] * w).sum()).collect()
}

fn squared_errors(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).collect()
}

/// One-standard-error rule over [`LASSO_GRID`]: the strongest penalty whose
/// validation loss is within one standard error of the best one. Losses
/// that are statistically tied therefore resolve toward stronger
/// regularization.
fn select_lambda(per_sample_losses: &[Vec<f64>]) -> f64 {
    let stats: Vec<(f64, f64)> = per_sample_losses
        .iter()
        .map(|l| {
            let n = l.len() as f64;
            let mean = l.iter().sum::<f64>() / n;
            let var = l.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
            (mean, (var / n).sqrt())
        })
        .collect();
    let best = (0..stats.len())
        .min_by(|&a, &b| stats[a].0.total_cmp(&stats[b].0))
        .unwrap_or(0);
    let bound = stats[best].0 + stats[best].1;
    let chosen = (0..stats.len()).find(|&i| stats[i].0 <= bound).unwrap_or(best);
    LASSO_GRID[chosen]
}

fn mse(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len() as f64
}

/// A single regression stump: `left` if `x[feature] ≤ threshold` else `right`.
struct Stump {
    feature: usize,
    threshold: f64,
    left: f64,
    right: f64,
}

/// Least-squares boosting with stumps. Returns the stumps and per-feature gains.
fn boosted_stumps(cols: &[Vec<f64>], y: &[f64], rounds: usize, lr: f64) -> (Vec<Stump>, Vec<f64>) {
    let m = cols.len();
    let n = y.len();
    let orders: Vec<Vec<usize>> = cols
        .iter()
        .map(|c| {
            let mut o: Vec<usize> = (0..n).collect();
            o.sort_by(|&a, &b| c[a].total_cmp(&c[b]).then(a.cmp(&b)));
            o
        })
        .collect();
    let mut residual = y.to_vec();
    let mut gains = vec![0.0; m];
    let mut stumps = Vec::new();
    for _ in 0..rounds {
        let total: f64 = residual.iter().sum();
        let mut best: Option<(f64, Stump)> = None;
        for (j, order) in orders.iter().enumerate() {
            let mut left_sum = 0.0;
            for (pos, &r) in order.iter().enumerate().take(n - 1) {
                left_sum += residual[r];
                let next = order[pos + 1];
                if cols[j][r] == cols[j][next] {
                    continue;
                }
                let (nl, nr) = ((pos + 1) as f64, (n - pos - 1) as f64);
                let right_sum = total - left_sum;
                let gain = left_sum * left_sum / nl + right_sum * right_sum / nr - total * total / n as f64;
                if best.as_ref().is_none_or(|(g, _)| gain > *g) {
                    best = Some((
                        gain,
                        Stump {
                            feature: j,
                            threshold: 0.5 * (cols[j][r] + cols[j][next]),
                            left: left_sum / nl,
                            right: right_sum / nr,
                        },
                    ));
                }
            }
        }
        let Some((gain, stump)) = best else { break };
        if gain <= 0.0 {
            break;
        }
        gains[stump.feature] += gain;
        for (r, res) in residual.iter_mut().enumerate() {
            let v = if cols[stump.feature][r] <= stump.threshold {
                stump.left
            } else {
                stump.right
            };
            *res -= lr * v;
        }
        stumps.push(Stump {
            left: lr * stump.left,
            right: lr * stump.right,
            ..stump
        });
    }
    (stumps, gains)
}

fn predict_stumps(cols: &[Vec<f64>], stumps: &[Stump]) -> Vec<f64> {
    let n = cols.first().map_or(0, Vec::len);
    (0..n)
        .map(|r| {
            stumps
                .iter()
                .map(|s| if cols[s.feature][r] <= s.threshold { s.left } else { s.right })
                .sum()
        })
        .collect()
}

fn majority_accuracy(train: &[f64], test: &[f64]) -> f64 {
    let mut counts = std::collections::BTreeMap::new();
    for v in train {
        *counts.entry(v.round() as i64).or_insert(0usize) += 1;
    }
    let mode = counts.iter().max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0))).map(|(v, _)| *v).unwrap_or(0);
    test.iter().filter(|v| v.round() as i64 == mode).count() as f64 / test.len() as f64
}

/// Fits one predictor per target column on pooled `(latent, target)` pairs.
///
/// Column `j` of the returned matrix holds the per-latent importances for
/// target `j`, normalized to sum to one. A constant target yields a zero
/// column and undefined informativeness; a non-constant target for which no
/// latent receives importance yields a uniform column.
pub fn fit_importance(
    latents: &Tensor,
    targets: &Tensor,
    kinds: &[TargetKind],
    names: &[String],
    config: &DciConfig,
) -> Result<ImportanceFit> {
    if latents.ndim() != 2 || targets.ndim() != 2 || latents.shape()[0] != targets.shape()[0] {
        return Err(Error::Metric(format!(
            "latents {:?} and targets {:?} must be N×m and N×k",
            latents.shape(),
            targets.shape()
        )));
    }
    let (n, m, k) = (latents.shape()[0], latents.shape()[1], targets.shape()[1]);
    if kinds.len() != k || names.len() != k {
        return Err(Error::Metric(format!("{k} targets but {} kinds / {} names", kinds.len(), names.len())));
    }
    if !latents.is_finite() || !targets.is_finite() {
        return Err(Error::NonFinite("DCI inputs".into()));
    }
    if !(config.train_fraction > 0.0 && config.train_fraction < 1.0) {
        return Err(Error::Config(format!("train_fraction {} not in (0, 1)", config.train_fraction)));
    }

    let mut rows: Vec<usize> = (0..n).collect();
    rows.shuffle(&mut seeded(config.seed));
    if let Some(limit) = config.max_samples {
        rows.truncate(limit);
    }
    let n_train = (rows.len() as f64 * config.train_fraction).round() as usize;
    let n_val = (n_train as f64 * config.validation_fraction).round() as usize;
    if n_train < 4 || n_train - n_val < 2 || n_val < 1 || n_train >= rows.len() {
        return Err(Error::Metric(format!("{n} samples are too few for a train/validation/test split")));
    }
    let (train_rows, test_rows) = rows.split_at(n_train);
    let fit_rows = &train_rows[..n_train - n_val];
    let val_rows = &train_rows[n_train - n_val..];

    let design = Design::fit(latents, train_rows);
    let fit_design = Design::fit(latents, fit_rows);
    let val_cols = fit_design.transform(latents, val_rows);
    let test_cols = design.transform(latents, test_rows);

    let mut values = vec![0.0; m * k];
    let mut info = Vec::with_capacity(k);
    for j in 0..k {
        let target = |rs: &[usize]| -> Vec<f64> { rs.iter().map(|&r| targets.data()[r * k + j]).collect() };
        let (y_train, y_test) = (target(train_rows), target(test_rows));
        let mu = y_train.iter().sum::<f64>() / y_train.len() as f64;
        let sd = (y_train.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / y_train.len() as f64).sqrt();
        let baseline = (kinds[j] == TargetKind::Discrete).then(|| majority_accuracy(&y_train, &y_test));
        if sd == 0.0 {
            info.push(Informativeness {
                name: names[j].clone(),
                kind: kinds[j],
                score: None,
                majority_baseline: baseline,
                test_mse: None,
                lambda: None,
                degenerate: true,
            });
            continue;
        }
        let ys: Vec<f64> = y_train.iter().map(|v| (v - mu) / sd).collect();

        let (importance, pred_std, lambda) = match config.predictor {
            PredictorKind::Lasso => {
                let y_fit = target(fit_rows);
                let y_val = target(val_rows);
                let (fmu, fsd) = {
                    let mu = y_fit.iter().sum::<f64>() / y_fit.len() as f64;
                    let sd = (y_fit.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / y_fit.len() as f64).sqrt();
                    (mu, if sd > 0.0 { sd } else { 1.0 })
                };
                let y_fit_s: Vec<f64> = y_fit.iter().map(|v| (v - fmu) / fsd).collect();
                let y_val_s: Vec<f64> = y_val.iter().map(|v| (v - fmu) / fsd).collect();
                let mut coef = vec![0.0; m];
                let mut losses = Vec::with_capacity(LASSO_GRID.len());
                for &lam in &LASSO_GRID {
                    coef = lasso(&fit_design.cols, &y_fit_s, lam, &coef);
                    losses.push(squared_errors(&predict_linear(&val_cols, &coef), &y_val_s));
                }
                let lam = select_lambda(&losses);
                let coef = lasso(&design.cols, &ys, lam, &vec![0.0; m]);
                let pred = predict_linear(&test_cols, &coef);
                (coef.iter().map(|c| c.abs()).collect::<Vec<_>>(), pred, Some(lam))
            }
            PredictorKind::BoostedStumps => {
                let (stumps, gains) = boosted_stumps(
                    &design.cols,
                    &ys,
                    config.boosting_rounds,
                    config.boosting_learning_rate,
                );
                (gains, predict_stumps(&test_cols, &stumps), None)
            }
        };

        let total: f64 = importance.iter().sum();
        for i in 0..m {
            values[i * k + j] = if total > 0.0 { importance[i] / total } else { 1.0 / m as f64 };
        }
        let pred: Vec<f64> = pred_std.iter().map(|p| mu + sd * p).collect();
        let test_mse = mse(&pred, &y_test);
        let score = match kinds[j] {
            TargetKind::Discrete => {
                let (lo, hi) = y_train
                    .iter()
                    .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
                let hits = pred
                    .iter()
                    .zip(&y_test)
                    .filter(|(p, y)| p.round().clamp(lo, hi) == y.round())
                    .count();
                hits as f64 / y_test.len() as f64
            }
            TargetKind::Continuous => {
                let tm = y_test.iter().sum::<f64>() / y_test.len() as f64;
                let var = y_test.iter().map(|v| (v - tm).powi(2)).sum::<f64>() / y_test.len() as f64;
                if var > 0.0 {
                    1.0 - test_mse / var
                } else {
                    f64::NAN
                }
            }
        };
        info.push(Informativeness {
            name: names[j].clone(),
            kind: kinds[j],
            score: score.is_finite().then_some(score),
            majority_baseline: baseline,
            test_mse: Some(test_mse),
            lambda,
            degenerate: false,
        });
    }

    Ok(ImportanceFit {
        importance: ImportanceMatrix::with_names(m, k, values, names.to_vec())?,
        informativeness: info,
        predictor: config.predictor,
        n_train,
        n_test: rows.len() - n_train,
    })
}

/// Flattens `(N, T, m)` latents and `(N, T, k)` targets into per-step pairs.
pub fn pool_time_steps(latents: &Tensor, targets: &Tensor) -> Result<(Tensor, Tensor)> {
    if latents.ndim() != 3 || targets.ndim() != 3 || latents.shape()[..2] != targets.shape()[..2] {
        return Err(Error::Metric(format!(
            "latents {:?} and targets {:?} must share (N, T)",
            latents.shape(),
            targets.shape()
        )));
    }
    let rows = latents.shape()[0] * latents.shape()[1];
    Ok((
        latents.reshape(&[rows, latents.shape()[2]])?,
        targets.reshape(&[rows, targets.shape()[2]])?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lasso_recovers_a_single_coefficient() {
        let x = vec![vec![1.0, -1.0, 2.0, 0.0, -2.0], vec![0.5, 0.3, -0.2, 0.1, -0.7]];
        let y = x[0].clone();
        let b = lasso(&x, &y, 1e-3, &[0.0, 0.0]);
        assert!(b[0] > 0.99 && b[1].abs() < 1e-6, "{b:?}");
    }

    #[test]
    fn stumps_split_on_the_informative_feature() {
        let x = vec![(0..20).map(f64::from).collect::<Vec<_>>(), vec![0.0; 20]];
        let y: Vec<f64> = (0..20).map(|i| if i < 10 { -1.0 } else { 1.0 }).collect();
        let (stumps, gains) = boosted_stumps(&x, &y, 5, 0.5);
        assert_eq!(stumps[0].feature, 0);
        assert!((stumps[0].threshold - 9.5).abs() < 1e-12);
        assert_eq!(gains[1], 0.0);
    }
}
