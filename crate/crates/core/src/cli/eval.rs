//! Evaluation pipelines behind `eval-dci` and `eval-downstream`.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::figures::{heatmap, line_panels, Panel};
use crate::autodiff::Tensor;
use crate::dci::{
    fit_importance, grouped_importance, pool_time_steps, ConceptMap, DciConfig, DciScores, PredictorKind,
    TargetKind,
};
use crate::downstream::{fit_linear_classifier, summarize_all, ClassifierConfig, EvalReport};
use crate::error::{Error, Result};
use crate::io::{read_json, write_json};
use crate::rng::stream;
use crate::synth::{Cardinality, Corpus, Split};
use crate::train::{embed, Embedding, TrainedRun};

pub const METRICS_JSON: &str = "metrics.json";
pub const METRICS_CSV: &str = "metrics.csv";
pub const FIGURES_DIR: &str = "figures";

const SHUFFLE_STREAM: u64 = 30;

/// Per-step factor targets of `series`: `(N, T, k)` with discrete factors
/// as indices and continuous factors as values.
pub fn factor_targets(corpus: &Corpus, series: &[usize]) -> Result<(Tensor, Vec<TargetKind>, Vec<String>)> {
    let (t, k) = (corpus.series_length(), corpus.num_factors());
    let cards = &corpus.metadata.cardinalities;
    let mut data = Vec::with_capacity(series.len() * t * k);
    for &i in series {
        for s in 0..t {
            for (f, card) in cards.iter().enumerate() {
                data.push(match card {
                    Cardinality::Discrete(_) => f64::from(corpus.indices(i, f)[s]),
                    Cardinality::Continuous(_) => corpus.trace(i, f)[s],
                });
            }
        }
    }
    let kinds = cards
        .iter()
        .map(|c| match c {
            Cardinality::Discrete(_) => TargetKind::Discrete,
            Cardinality::Continuous(_) => TargetKind::Continuous,
        })
        .collect();
    Ok((
        Tensor::new(vec![series.len(), t, k], data)?,
        kinds,
        corpus.metadata.factor_names.clone(),
    ))
}

#[derive(Clone, Debug, Default)]
pub struct DciOptions {
    pub predictor: PredictorKind,
    /// Defaults to the run seed.
    pub seed: Option<u64>,
    /// Feature→concept CSV for the grouped variant.
    pub concepts: Option<std::path::PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DciSection {
    pub disentanglement: f64,
    pub completeness: f64,
    /// Mean informativeness over factors where it is defined.
    pub informativeness: Option<f64>,
    pub test_series: usize,
    pub seed: u64,
    pub scores: DciScores,
}

impl DciSection {
    fn new(scores: DciScores, test_series: usize, seed: u64) -> Self {
        Self {
            disentanglement: scores.disentanglement,
            completeness: scores.completeness,
            informativeness: scores.mean_informativeness(),
            test_series,
            seed,
            scores,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DciEvaluation {
    pub dci: DciSection,
    pub grouped: Option<DciSection>,
    pub embedding: Embedding,
}

/// DCI of the run's posterior means on the corpus test split.
pub fn evaluate_dci(run: &TrainedRun, corpus: &Corpus, options: &DciOptions) -> Result<DciEvaluation> {
    let seed = options.seed.unwrap_or(run.config.seed);
    let series: Vec<usize> = corpus.split_indices(Split::Test).collect();
    if series.is_empty() {
        return Err(Error::Data("corpus has no test series to evaluate on".into()));
    }
    let embedding = embed(&run.model, corpus, &series, run.config.subsection_length)?;
    let latents = embedding.time_major();
    let config = DciConfig {
        predictor: options.predictor,
        seed,
        ..DciConfig::default()
    };

    let (targets, kinds, names) = factor_targets(corpus, &series)?;
    let (z, c) = pool_time_steps(&latents, &targets)?;
    let fit = fit_importance(&z, &c, &kinds, &names, &config)?;
    let dci = DciSection::new(DciScores::from_fit(fit)?, series.len(), seed);

    let grouped = match &options.concepts {
        None => None,
        Some(path) => {
            let map = ConceptMap::read_csv(path)?;
            let d = corpus.obs_dim();
            let mut obs = Vec::with_capacity(series.len() * corpus.series_length() * d);
            for &i in &series {
                obs.extend_from_slice(corpus.series(i));
            }
            let observations = Tensor::new(vec![series.len(), corpus.series_length(), d], obs)?;
            let (z, x) = pool_time_steps(&latents, &observations)?;
            let features = feature_names(d);
            let fit = fit_importance(&z, &x, &vec![TargetKind::Continuous; d], &features, &config)?;
            let grouped_matrix = grouped_importance(&fit.importance, &map)?;
            let mut scores = DciScores::from_matrix(grouped_matrix)?;
            scores.informativeness = fit.informativeness;
            scores.predictor = Some(fit.predictor);
            Some(DciSection::new(scores, series.len(), seed))
        }
    };
    Ok(DciEvaluation {
        dci,
        grouped,
        embedding,
    })
}

/// Names of the observed features in a concept map: `x0`, `x1`, ….
pub fn feature_names(d: usize) -> Vec<String> {
    (0..d).map(|i| format!("x{i}")).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DownstreamSection {
    pub auroc: f64,
    pub shuffled_labels: bool,
    pub report: EvalReport,
}

/// AUROC of a linear classifier on per-series latent summaries.
///
/// With `shuffle_labels`, labels are permuted (seeded) before fitting, which
/// should give chance-level AUROC.
pub fn evaluate_downstream(
    run: &TrainedRun,
    corpus: &Corpus,
    seed: Option<u64>,
    shuffle_labels: bool,
) -> Result<DownstreamSection> {
    let series: Vec<usize> = corpus.split_indices(Split::All).collect();
    let embedding = embed(&run.model, corpus, &series, run.config.subsection_length)?;
    downstream_from_embedding(&embedding, corpus, seed.unwrap_or(run.config.seed), shuffle_labels)
}

pub fn downstream_from_embedding(
    embedding: &Embedding,
    corpus: &Corpus,
    seed: u64,
    shuffle_labels: bool,
) -> Result<DownstreamSection> {
    let all = corpus
        .labels
        .as_ref()
        .ok_or_else(|| Error::Data("corpus has no outcome labels".into()))?;
    let mut labels: Vec<u8> = embedding.series.iter().map(|&i| all[i]).collect();
    if shuffle_labels {
        labels.shuffle(&mut stream(seed, SHUFFLE_STREAM));
    }
    let summaries = summarize_all(&embedding.time_major())?;
    let report = fit_linear_classifier(&summaries, &labels, &ClassifierConfig::default(), seed)?;
    Ok(DownstreamSection {
        auroc: report.auroc,
        shuffled_labels: shuffle_labels,
        report,
    })
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub seed: u64,
    pub config_sha256: String,
}

/// Everything the evaluation commands emit for one run.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub run: RunSummary,
    #[serde(default)]
    pub dci: Option<DciSection>,
    #[serde(default)]
    pub grouped_dci: Option<DciSection>,
    #[serde(default)]
    pub downstream: Option<DownstreamSection>,
}

impl Metrics {
    /// Reads `metrics.json` from `dir`, or starts empty when it is absent.
    pub fn load_or_default(dir: &Path, run: &TrainedRun) -> Result<Self> {
        let path = dir.join(METRICS_JSON);
        let mut metrics = if path.exists() {
            read_json(&path)?
        } else {
            Self::default()
        };
        metrics.run = RunSummary {
            seed: run.manifest.seed,
            config_sha256: run.manifest.config_sha256.clone(),
        };
        Ok(metrics)
    }

    /// Flat `(section, metric, value)` rows.
    pub fn rows(&self) -> Vec<(String, String, f64)> {
        let mut rows = Vec::new();
        let mut dci_rows = |name: &str, s: &DciSection| {
            rows.push((name.into(), "disentanglement".into(), s.disentanglement));
            rows.push((name.into(), "completeness".into(), s.completeness));
            if let Some(i) = s.informativeness {
                rows.push((name.into(), "informativeness".into(), i));
            }
            for info in &s.scores.informativeness {
                if let Some(v) = info.score {
                    rows.push((name.into(), format!("informativeness.{}", info.name), v));
                }
                if let Some(v) = info.majority_baseline {
                    rows.push((name.into(), format!("majority_baseline.{}", info.name), v));
                }
            }
        };
        if let Some(s) = &self.dci {
            dci_rows("dci", s);
        }
        if let Some(s) = &self.grouped_dci {
            dci_rows("grouped_dci", s);
        }
        if let Some(d) = &self.downstream {
            let metric = if d.shuffled_labels { "auroc_shuffled_labels" } else { "auroc" };
            rows.push(("downstream".into(), metric.into(), d.auroc));
        }
        rows
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_json(&dir.join(METRICS_JSON), self)?;
        let path = dir.join(METRICS_CSV);
        let err = |e: csv::Error| Error::Data(format!("{}: {e}", path.display()));
        let mut w = csv::Writer::from_path(&path).map_err(err)?;
        w.write_record(["section", "metric", "value"]).map_err(err)?;
        for (section, metric, value) in self.rows() {
            w.write_record([section, metric, value.to_string()]).map_err(err)?;
        }
        w.flush().map_err(|e| Error::io(&path, e))
    }
}

fn write_figure(dir: &Path, name: &str, svg: &str) -> Result<()> {
    let figures = dir.join(FIGURES_DIR);
    std::fs::create_dir_all(&figures).map_err(|e| Error::io(&figures, e))?;
    let path = figures.join(name);
    std::fs::write(&path, svg).map_err(|e| Error::io(&path, e))
}

/// Factor traces with observations, latent mean traces, and importance
/// heatmaps for the first evaluated series.
pub fn write_dci_figures(dir: &Path, corpus: &Corpus, evaluation: &DciEvaluation) -> Result<()> {
    let Some(&first) = evaluation.embedding.series.first() else {
        return Ok(());
    };
    let (t, d, k) = (corpus.series_length(), corpus.obs_dim(), corpus.num_factors());
    let names = &corpus.metadata.factor_names;
    let factor_lines: Vec<(String, Vec<f64>)> =
        (0..k).map(|f| (names[f].clone(), corpus.trace(first, f).to_vec())).collect();
    let index_lines: Vec<(String, Vec<f64>)> = (0..k)
        .filter(|&f| corpus.metadata.cardinalities[f].discrete().is_some())
        .map(|f| (names[f].clone(), corpus.indices(first, f).iter().map(|&v| f64::from(v)).collect()))
        .collect();
    let obs = corpus.series(first);
    let obs_lines: Vec<(String, Vec<f64>)> = (0..d.min(8))
        .map(|j| (format!("x{j}"), (0..t).map(|s| obs[s * d + j]).collect()))
        .collect();
    let panels = vec![
        Panel {
            title: "ground-truth factor traces (continuous)".into(),
            lines: factor_lines.clone(),
        },
        Panel {
            title: "quantized factor indices".into(),
            lines: index_lines,
        },
        Panel {
            title: format!("observations (first {} of {d} features)", d.min(8)),
            lines: obs_lines,
        },
    ];
    write_figure(
        dir,
        "factor_traces.svg",
        &line_panels(&format!("series {first}: factors and observations"), "time step", &panels),
    )?;

    let means = &evaluation.embedding.means;
    let m = means.shape()[1];
    let mut panels: Vec<Panel> = (0..m)
        .map(|j| Panel {
            title: format!("latent z{j} posterior mean"),
            lines: vec![(format!("z{j}"), means.data()[j * t..(j + 1) * t].to_vec())],
        })
        .collect();
    panels.push(Panel {
        title: "ground-truth factors".into(),
        lines: factor_lines,
    });
    write_figure(
        dir,
        "latent_traces.svg",
        &line_panels(&format!("series {first}: latent mean traces"), "time step", &panels),
    )?;

    let heat = |s: &DciSection| -> (Vec<String>, Vec<Vec<f64>>) {
        let r = &s.scores.importance;
        let rows = (0..r.latents).map(|i| format!("z{i}")).collect();
        let values = (0..r.latents).map(|i| r.row(i).to_vec()).collect();
        (rows, values)
    };
    let (rows, values) = heat(&evaluation.dci);
    write_figure(
        dir,
        "importance_heatmap.svg",
        &heatmap(
            &format!(
                "latent → factor importance (D={:.3}, C={:.3})",
                evaluation.dci.disentanglement, evaluation.dci.completeness
            ),
            &rows,
            &evaluation.dci.scores.importance.factor_names,
            &values,
        ),
    )?;
    if let Some(g) = &evaluation.grouped {
        let (rows, values) = heat(g);
        write_figure(
            dir,
            "concept_heatmap.svg",
            &heatmap(
                &format!("latent → concept importance (D={:.3}, C={:.3})", g.disentanglement, g.completeness),
                &rows,
                &g.scores.importance.factor_names,
                &values,
            ),
        )?;
    }
    Ok(())
}

/// Figure of a metric across runs.
pub fn write_distribution_figure(dir: &Path, groups: &BTreeMap<String, Vec<f64>>) -> Result<()> {
    let groups: Vec<(String, Vec<f64>)> = groups.iter().map(|(k, v)| (k.clone(), v.clone())).collect();
    write_figure(
        dir,
        "score_distributions.svg",
        &super::figures::strip_plot("scores across runs (mean ± std)", &groups),
    )
}
