//! Python bindings: kernels and the structured posterior, corpus synthesis,
//! training, embedding, and the DCI / AUROC evaluations.
//!
//! Arrays cross the boundary as nested lists of floats; structured results
//! (metrics, reports) are returned as plain dicts.

use std::path::PathBuf;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use dgpvae::cli::eval::{evaluate_dci, evaluate_downstream, DciOptions};
use dgpvae::dci::{grouped_importance, ConceptMap, DciScores, ImportanceMatrix, PredictorKind};
use dgpvae::kernels::{gram, KernelSpec};
use dgpvae::posterior::{kl_to_gp_prior, sample, BandedCholesky, GpPrior, StructuredGaussian};
use dgpvae::rng::seeded;
use dgpvae::synth::{generate_corpus, CorpusConfig, Split};
use dgpvae::train::{embed, load_run};

fn to_py(error: dgpvae::Error) -> PyErr {
    match error {
        dgpvae::Error::Usage(_) | dgpvae::Error::Config(_) => PyValueError::new_err(error.to_string()),
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

/// Serializes `value` to JSON and parses it back into Python objects.
fn to_python<'py, T: serde::Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

fn structured(mean: Vec<f64>, diag: Vec<f64>, superdiag: Vec<f64>) -> PyResult<StructuredGaussian> {
    let band = BandedCholesky::new(diag, superdiag).map_err(to_py)?;
    StructuredGaussian::new(mean, band).map_err(to_py)
}

fn cauchy_prior(variance: f64, length_scale: f64, len: usize, jitter: f64) -> PyResult<GpPrior> {
    let spec = KernelSpec::cauchy(variance, length_scale).map_err(to_py)?;
    Ok(GpPrior::from(&gram(&spec, len, jitter).map_err(to_py)?))
}

fn rows(matrix: &nalgebra::DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..matrix.nrows())
        .map(|i| (0..matrix.ncols()).map(|j| matrix[(i, j)]).collect())
        .collect()
}

/// Cauchy kernel Gram matrix `K + jitter·I` on the grid `0..length`.
#[pyfunction]
#[pyo3(signature = (variance, length_scale, length, jitter = 1e-8))]
fn cauchy_gram(variance: f64, length_scale: f64, length: usize, jitter: f64) -> PyResult<Vec<Vec<f64>>> {
    let spec = KernelSpec::cauchy(variance, length_scale).map_err(to_py)?;
    Ok(rows(&gram(&spec, length, jitter).map_err(to_py)?.matrix()))
}

/// KL from a banded-precision Gaussian (precision `BᵀB`, `B` upper
/// bidiagonal with the given diagonal and superdiagonal) to a Cauchy GP prior.
#[pyfunction]
#[pyo3(signature = (mean, diag, superdiag, variance, length_scale, jitter = 1e-8))]
fn structured_kl(
    mean: Vec<f64>,
    diag: Vec<f64>,
    superdiag: Vec<f64>,
    variance: f64,
    length_scale: f64,
    jitter: f64,
) -> PyResult<f64> {
    let q = structured(mean, diag, superdiag)?;
    let prior = cauchy_prior(variance, length_scale, q.mean.len(), jitter)?;
    kl_to_gp_prior(&q, &prior).map_err(to_py)
}

/// `n` draws from a banded-precision Gaussian.
#[pyfunction]
#[pyo3(signature = (mean, diag, superdiag, n, seed = 0))]
fn sample_posterior(mean: Vec<f64>, diag: Vec<f64>, superdiag: Vec<f64>, n: usize, seed: u64) -> PyResult<Vec<Vec<f64>>> {
    let q = structured(mean, diag, superdiag)?;
    let mut rng = seeded(seed);
    Ok((0..n).map(|_| sample(&q, &mut rng)).collect())
}

/// DCI disentanglement and completeness of an importance matrix given as
/// rows (latents) by columns (factors).
#[pyfunction]
#[pyo3(signature = (importance, factor_names = None))]
fn dci_scores<'py>(
    py: Python<'py>,
    importance: Vec<Vec<f64>>,
    factor_names: Option<Vec<String>>,
) -> PyResult<Bound<'py, PyAny>> {
    let mut matrix = ImportanceMatrix::from_rows(&importance).map_err(to_py)?;
    if let Some(names) = factor_names {
        matrix = ImportanceMatrix::with_names(matrix.latents, matrix.factors, matrix.values, names).map_err(to_py)?;
    }
    to_python(py, &DciScores::from_matrix(matrix).map_err(to_py)?)
}

/// DCI after grouping feature columns into concepts.
#[pyfunction]
fn grouped_dci<'py>(
    py: Python<'py>,
    importance: Vec<Vec<f64>>,
    feature_names: Vec<String>,
    concepts: Vec<(String, String)>,
) -> PyResult<Bound<'py, PyAny>> {
    let matrix = ImportanceMatrix::from_rows(&importance).map_err(to_py)?;
    let matrix =
        ImportanceMatrix::with_names(matrix.latents, matrix.factors, matrix.values, feature_names).map_err(to_py)?;
    let map = ConceptMap::from_pairs(&concepts).map_err(to_py)?;
    let grouped = grouped_importance(&matrix, &map).map_err(to_py)?;
    to_python(py, &DciScores::from_matrix(grouped).map_err(to_py)?)
}

/// Area under the ROC curve, ties counted as one half.
#[pyfunction]
fn auroc(scores: Vec<f64>, labels: Vec<u8>) -> PyResult<f64> {
    dgpvae::downstream::auroc(&scores, &labels).map_err(to_py)
}

/// A synthetic corpus: observations, ground-truth factors and labels.
#[pyclass(module = "dgpvae_py")]
struct Corpus {
    inner: dgpvae::synth::Corpus,
}

#[pymethods]
impl Corpus {
    /// Generates a corpus from a TOML corpus config.
    #[staticmethod]
    #[pyo3(signature = (config_toml, seed = None))]
    fn generate(config_toml: &str, seed: Option<u64>) -> PyResult<Self> {
        let mut config: CorpusConfig =
            toml::from_str(config_toml).map_err(|e| PyValueError::new_err(e.to_string()))?;
        if let Some(seed) = seed {
            config.seed = seed;
        }
        Ok(Self {
            inner: generate_corpus(&config).map_err(to_py)?,
        })
    }

    /// The desk-scale default corpus for `seed`.
    #[staticmethod]
    #[pyo3(signature = (seed = 0))]
    fn desk_default(seed: u64) -> PyResult<Self> {
        Ok(Self {
            inner: generate_corpus(&CorpusConfig::desk_default(seed)).map_err(to_py)?,
        })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: dgpvae::synth::Corpus::load(&path).map_err(to_py)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(&path).map_err(to_py)
    }

    #[getter]
    fn n_series(&self) -> usize {
        self.inner.n_series()
    }

    #[getter]
    fn series_length(&self) -> usize {
        self.inner.series_length()
    }

    #[getter]
    fn obs_dim(&self) -> usize {
        self.inner.obs_dim()
    }

    #[getter]
    fn factor_names(&self) -> Vec<String> {
        self.inner.metadata.factor_names.clone()
    }

    #[getter]
    fn labels(&self) -> Option<Vec<u8>> {
        self.inner.labels.clone()
    }

    /// Series indices of `"train"`, `"test"` or `"all"`.
    fn split(&self, name: &str) -> PyResult<Vec<usize>> {
        let split = match name {
            "train" => Split::Train,
            "test" => Split::Test,
            "all" => Split::All,
            other => return Err(PyValueError::new_err(format!("unknown split {other:?}"))),
        };
        Ok(self.inner.split_indices(split).collect())
    }

    /// Observations of series `i` as `(T, d)` rows.
    fn observations(&self, i: usize) -> PyResult<Vec<Vec<f64>>> {
        self.check(i)?;
        Ok(self.inner.series(i).chunks(self.inner.obs_dim()).map(<[f64]>::to_vec).collect())
    }

    /// Quantized index trace of factor `f` in series `i`.
    fn factor_indices(&self, i: usize, f: usize) -> PyResult<Vec<u32>> {
        self.check(i)?;
        if f >= self.inner.num_factors() {
            return Err(PyValueError::new_err(format!("factor {f} out of range")));
        }
        Ok(self.inner.indices(i, f).to_vec())
    }

    fn __repr__(&self) -> String {
        format!(
            "Corpus(n_series={}, series_length={}, obs_dim={}, factors={:?})",
            self.inner.n_series(),
            self.inner.series_length(),
            self.inner.obs_dim(),
            self.inner.metadata.factor_names
        )
    }
}

impl Corpus {
    fn check(&self, i: usize) -> PyResult<()> {
        if i < self.inner.n_series() {
            Ok(())
        } else {
            Err(PyValueError::new_err(format!("series {i} out of range")))
        }
    }
}

/// A trained run loaded from its directory.
#[pyclass(module = "dgpvae_py")]
struct TrainedRun {
    inner: dgpvae::train::TrainedRun,
}

#[pymethods]
impl TrainedRun {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: load_run(&path).map_err(to_py)?,
        })
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.config.seed
    }

    #[getter]
    fn latent_dim(&self) -> usize {
        self.inner.config.model.latent_dim
    }

    /// Per-channel length scales of the GP priors.
    #[getter]
    fn length_scales(&self) -> Vec<f64> {
        self.inner.config.channel_length_scales()
    }

    #[getter]
    fn manifest<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_python(py, &self.inner.manifest)
    }

    /// Posterior means `(N, m, T)` of the given series.
    fn embed(&self, corpus: &Corpus, series: Vec<usize>) -> PyResult<Vec<Vec<Vec<f64>>>> {
        let emb = embed(&self.inner.model, &corpus.inner, &series, self.inner.config.subsection_length)
            .map_err(to_py)?;
        let (m, t) = (emb.means.shape()[1], emb.means.shape()[2]);
        Ok(emb
            .means
            .data()
            .chunks(m * t)
            .map(|s| s.chunks(t).map(<[f64]>::to_vec).collect())
            .collect())
    }

    /// DCI on the corpus test split (does not write to the run directory).
    #[pyo3(signature = (corpus, predictor = "lasso", seed = None))]
    fn dci<'py>(&self, py: Python<'py>, corpus: &Corpus, predictor: &str, seed: Option<u64>) -> PyResult<Bound<'py, PyAny>> {
        let predictor = match predictor {
            "lasso" => PredictorKind::Lasso,
            "boosted_stumps" | "boosted-stumps" => PredictorKind::BoostedStumps,
            other => return Err(PyValueError::new_err(format!("unknown predictor {other:?}"))),
        };
        let options = DciOptions {
            predictor,
            seed,
            concepts: None,
        };
        let evaluation = evaluate_dci(&self.inner, &corpus.inner, &options).map_err(to_py)?;
        to_python(py, &evaluation.dci)
    }

    /// Downstream AUROC of a linear classifier on latent summaries.
    #[pyo3(signature = (corpus, seed = None, shuffle_labels = false))]
    fn downstream<'py>(
        &self,
        py: Python<'py>,
        corpus: &Corpus,
        seed: Option<u64>,
        shuffle_labels: bool,
    ) -> PyResult<Bound<'py, PyAny>> {
        let section = evaluate_downstream(&self.inner, &corpus.inner, seed, shuffle_labels).map_err(to_py)?;
        to_python(py, &section)
    }
}

/// Generates a corpus directory from a TOML config file.
#[pyfunction]
#[pyo3(signature = (config, out, seed = None))]
fn synth(config: PathBuf, out: PathBuf, seed: Option<u64>) -> PyResult<Corpus> {
    Ok(Corpus {
        inner: dgpvae::cli::cmd_synth(&config, &out, seed).map_err(to_py)?,
    })
}

/// Trains from a TOML run config; returns the run directory.
#[pyfunction]
#[pyo3(signature = (config, out = None, corpus = None, seed = None))]
fn train(config: PathBuf, out: Option<PathBuf>, corpus: Option<PathBuf>, seed: Option<u64>) -> PyResult<PathBuf> {
    dgpvae::cli::cmd_train(&config, out, corpus, seed).map_err(to_py)
}

/// Runs the command-line interface with `args` (without the program name)
/// and returns its exit code.
#[pyfunction]
fn run_cli(args: Vec<String>) -> i32 {
    dgpvae::cli::main_with_args(std::iter::once("dgpvae".to_string()).chain(args))
}

#[pymodule]
fn dgpvae_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_class::<Corpus>()?;
    m.add_class::<TrainedRun>()?;
    m.add_function(wrap_pyfunction!(cauchy_gram, m)?)?;
    m.add_function(wrap_pyfunction!(structured_kl, m)?)?;
    m.add_function(wrap_pyfunction!(sample_posterior, m)?)?;
    m.add_function(wrap_pyfunction!(dci_scores, m)?)?;
    m.add_function(wrap_pyfunction!(grouped_dci, m)?)?;
    m.add_function(wrap_pyfunction!(auroc, m)?)?;
    m.add_function(wrap_pyfunction!(synth, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(run_cli, m)?)?;
    Ok(())
}
