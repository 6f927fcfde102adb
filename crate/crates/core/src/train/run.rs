//! The training loop, run directories, and embedding with a trained model.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::batches::{batch_tensor, make_batches};
use super::config::{RunConfig, DEFAULT_PRIOR_JITTER};
use crate::autodiff::{adam_step, checkpoint, AdamState, Tensor};
use crate::error::{Error, Result};
use crate::io::{read_json, write_json};
use crate::kernels::{gram, KernelSpec};
use crate::model::{draw_noise, elbo_and_gradient, DecoderConfig, DgpVae, ElboBreakdown, EncoderConfig};
use crate::posterior::GpPrior;
use crate::rng::stream;
use crate::synth::{Corpus, Split};

pub const CONFIG_FILE: &str = "config.toml";
pub const RUN_MANIFEST: &str = "run.json";
pub const TRAIN_LOG: &str = "train_log.csv";
pub const TIMING_LOG: &str = "timing.csv";
pub const CHECKPOINT_DIR: &str = "checkpoint";
pub const LOCK_FILE: &str = "run.lock";

/// How the KL term relates to the subsection length; recorded in every run.
pub const KL_CONVENTION: &str =
    "KL summed over subsection steps and latent channels, averaged over series; not normalized by subsection length";

const INIT_STREAM: u64 = 10;
const BATCH_STREAM: u64 = 11;
const NOISE_STREAM: u64 = 12;

/// Cauchy priors keyed by (length scale, window length), built once each.
pub struct PriorCache {
    jitter: f64,
    cache: BTreeMap<(u64, u64, usize), Arc<GpPrior>>,
}

impl Default for PriorCache {
    fn default() -> Self {
        Self::new(DEFAULT_PRIOR_JITTER)
    }
}

impl PriorCache {
    /// `jitter` is the starting diagonal jitter for every Gram matrix.
    pub fn new(jitter: f64) -> Self {
        Self {
            jitter,
            cache: BTreeMap::new(),
        }
    }

    pub fn get(&mut self, variance: f64, length_scale: f64, len: usize) -> Result<Arc<GpPrior>> {
        let key = (variance.to_bits(), length_scale.to_bits(), len);
        if let Some(p) = self.cache.get(&key) {
            return Ok(Arc::clone(p));
        }
        let g = gram(&KernelSpec::cauchy(variance, length_scale)?, len, self.jitter)?;
        let prior = Arc::new(GpPrior::from(&g));
        self.cache.insert(key, Arc::clone(&prior));
        Ok(prior)
    }

    /// One prior per channel for windows of length `len`.
    pub fn channel_priors(&mut self, variance: f64, scales: &[f64], len: usize) -> Result<Vec<Arc<GpPrior>>> {
        scales.iter().map(|&l| self.get(variance, l, len)).collect()
    }

    pub fn len(&self) -> usize {
        self.cache.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cache.is_empty()
    }
}

/// Exclusive ownership of a run directory; released on drop.
pub struct RunLock {
    path: PathBuf,
}

impl RunLock {
    pub fn acquire(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(LOCK_FILE);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                writeln!(f, "{}", std::process::id()).map_err(|e| Error::io(&path, e))?;
                Ok(Self { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(Error::Usage(format!(
                "{} is in use by another command (delete {} if it is stale)",
                dir.display(),
                path.display()
            ))),
            Err(e) => Err(Error::io(&path, e)),
        }
    }
}

impl Drop for RunLock {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.path);
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub step: u64,
    pub epoch: usize,
    pub batch: usize,
    pub elbo: f64,
    pub reconstruction: f64,
    pub kl: f64,
}

/// Reproduction record written as `run.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub format_version: u32,
    pub crate_version: String,
    pub seed: u64,
    pub config_sha256: String,
    pub corpus_seed: u64,
    pub encoder: EncoderConfig,
    pub decoder: DecoderConfig,
    pub channel_length_scales: Vec<f64>,
    pub kl_convention: String,
    pub steps: u64,
    pub final_elbo: ElboBreakdown,
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub model: DgpVae,
    pub log: Vec<LogEntry>,
    /// Wall-clock seconds since the start of training, per step.
    pub wallclock: Vec<f64>,
    pub manifest: RunManifest,
}

/// Loads the corpus named in `config` and trains on its training split.
pub fn train(config: &RunConfig) -> Result<TrainOutcome> {
    let corpus = Corpus::load(&config.corpus)?;
    train_on(config, &corpus)
}

/// Trains on an already-loaded corpus and writes the run directory.
pub fn train_on(config: &RunConfig, corpus: &Corpus) -> Result<TrainOutcome> {
    let (encoder, decoder) = config.resolve(corpus)?;
    let series: Vec<usize> = corpus.split_indices(Split::Train).collect();
    if series.is_empty() {
        return Err(Error::Data("corpus has no training series; nothing to train on".into()));
    }
    let out = &config.output_dir;
    let _lock = RunLock::acquire(out)?;
    std::fs::write(out.join(CONFIG_FILE), config.to_toml_string()?)
        .map_err(|e| Error::io(out.join(CONFIG_FILE), e))?;

    let mut model = DgpVae::new(encoder, decoder, &mut stream(config.seed, INIT_STREAM))?;
    let scales = config.channel_length_scales();
    let priors = PriorCache::new(config.prior_jitter).channel_priors(config.prior_variance, &scales, config.subsection_length)?;
    let mut adam = AdamState::new(&model.params);
    let mut batch_rng = stream(config.seed, BATCH_STREAM);
    let mut noise_rng = stream(config.seed, NOISE_STREAM);
    let m = model.latent_dim();

    let start = Instant::now();
    let mut log = Vec::new();
    let mut wallclock = Vec::new();
    let mut step = 0u64;
    for epoch in 0..config.epochs {
        let batches = make_batches(
            &series,
            corpus.series_length(),
            config.subsection_length,
            config.batch_size,
            config.subsection_mode,
            &mut batch_rng,
        )?;
        for (b, batch) in batches.iter().enumerate() {
            let context = |what: String| format!("{what} at epoch {epoch}, batch {b} (step {step})");
            let x = batch_tensor(corpus, batch)?;
            let noise = draw_noise(&mut noise_rng, batch.len(), config.subsection_length, m, config.mc_samples);
            let value = match elbo_and_gradient(&mut model, &x, &priors, config.beta, &noise) {
                Err(Error::NonFinite(what)) => {
                    log::error!("{}", context(format!("non-finite {what}")));
                    return Err(Error::NonFinite(context(what)));
                }
                other => other?,
            };
            // The optimizer minimizes; ascend the ELBO.
            for p in model.params.iter_mut() {
                p.grad = p.grad.map(|g| -g);
            }
            match adam_step(&mut model.params, &mut adam, &config.adam) {
                Err(Error::NonFiniteGradient(name)) => {
                    log::error!("{}", context(format!("non-finite gradient for {name}")));
                    return Err(Error::NonFiniteGradient(context(name)));
                }
                other => other?,
            }
            step += 1;
            log.push(LogEntry {
                step,
                epoch,
                batch: b,
                elbo: value.total,
                reconstruction: value.reconstruction,
                kl: value.kl,
            });
            wallclock.push(start.elapsed().as_secs_f64());
            if step.is_multiple_of(100) {
                log::info!("step {step}: elbo {:.4} (recon {:.4}, kl {:.4})", value.total, value.reconstruction, value.kl);
            }
        }
    }
    let last = log
        .last()
        .ok_or_else(|| Error::Data("no training steps were run".into()))?;

    checkpoint::save(&model.params, &out.join(CHECKPOINT_DIR))?;
    write_csv(&out.join(TRAIN_LOG), &log)?;
    let timing: Vec<_> = log.iter().zip(&wallclock).map(|(e, w)| (e.step, *w)).collect();
    write_timing(&out.join(TIMING_LOG), &timing)?;
    let manifest = RunManifest {
        format_version: 1,
        crate_version: env!("CARGO_PKG_VERSION").into(),
        seed: config.seed,
        config_sha256: config.hash()?,
        corpus_seed: corpus.metadata.seed,
        encoder: model.encoder.clone(),
        decoder: model.decoder.clone(),
        channel_length_scales: scales,
        kl_convention: KL_CONVENTION.into(),
        steps: step,
        final_elbo: ElboBreakdown::new(last.reconstruction, last.kl, config.beta),
    };
    write_json(&out.join(RUN_MANIFEST), &manifest)?;
    Ok(TrainOutcome {
        model,
        log,
        wallclock,
        manifest,
    })
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    for row in rows {
        w.serialize(row).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn write_timing(path: &Path, rows: &[(u64, f64)]) -> Result<()> {
    #[derive(Serialize)]
    struct Row {
        step: u64,
        wallclock_seconds: f64,
    }
    let rows: Vec<Row> = rows
        .iter()
        .map(|&(step, wallclock_seconds)| Row { step, wallclock_seconds })
        .collect();
    write_csv(path, &rows)
}

/// Reads the per-step log of a run directory.
pub fn read_train_log(run_dir: &Path) -> Result<Vec<LogEntry>> {
    let path = run_dir.join(TRAIN_LOG);
    let mut reader = csv::Reader::from_path(&path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    reader
        .deserialize()
        .map(|r| r.map_err(|e| Error::Data(format!("{}: {e}", path.display()))))
        .collect()
}

/// A finished run loaded back from disk.
pub struct TrainedRun {
    pub dir: PathBuf,
    pub config: RunConfig,
    pub manifest: RunManifest,
    pub model: DgpVae,
}

pub fn load_run(dir: &Path) -> Result<TrainedRun> {
    let config = RunConfig::read(&dir.join(CONFIG_FILE))?;
    let manifest: RunManifest = read_json(&dir.join(RUN_MANIFEST))?;
    let params = checkpoint::load(&dir.join(CHECKPOINT_DIR))?;
    let model = DgpVae::from_params(manifest.encoder.clone(), manifest.decoder.clone(), params)?;
    Ok(TrainedRun {
        dir: dir.to_path_buf(),
        config,
        manifest,
        model,
    })
}

/// Posterior means for a set of series.
#[derive(Clone, Debug, PartialEq)]
pub struct Embedding {
    pub series: Vec<usize>,
    /// `(N, m, T)`: channel-major per series.
    pub means: Tensor,
}

impl Embedding {
    /// The same values laid out `(N, T, m)`.
    pub fn time_major(&self) -> Tensor {
        let (n, m, t) = (self.means.shape()[0], self.means.shape()[1], self.means.shape()[2]);
        let src = self.means.data();
        let mut data = vec![0.0; n * t * m];
        for b in 0..n {
            for j in 0..m {
                for s in 0..t {
                    data[(b * t + s) * m + j] = src[(b * m + j) * t + s];
                }
            }
        }
        Tensor::new(vec![n, t, m], data).expect("same element count")
    }
}

/// Window offsets covering `0..len` with windows of `window`: tiles from 0,
/// plus a final window ending at `len` when `window` does not divide `len`.
pub fn window_offsets(len: usize, window: usize) -> Vec<usize> {
    let mut offsets: Vec<usize> = (0..len / window).map(|k| k * window).collect();
    if !len.is_multiple_of(window) {
        offsets.push(len - window);
    }
    offsets
}

/// Posterior means of `series`, stitched from windows of `window` steps.
///
/// Each step takes its value from the first window that covers it.
pub fn embed(model: &DgpVae, corpus: &Corpus, series: &[usize], window: usize) -> Result<Embedding> {
    if corpus.obs_dim() != model.encoder.input_dim {
        return Err(Error::Dimension(format!(
            "corpus observations have {} features, model expects {}",
            corpus.obs_dim(),
            model.encoder.input_dim
        )));
    }
    let t = corpus.series_length();
    if window == 0 || window > t {
        return Err(Error::Config(format!("window {window} must be in 1..={t}")));
    }
    let m = model.latent_dim();
    let d = corpus.obs_dim();
    let offsets = window_offsets(t, window);
    let mut means = vec![0.0; series.len() * m * t];
    const CHUNK: usize = 64;
    for (chunk_idx, chunk) in series.chunks(CHUNK).enumerate() {
        let mut data = Vec::with_capacity(chunk.len() * offsets.len() * window * d);
        for &s in chunk {
            if s >= corpus.n_series() {
                return Err(Error::Data(format!("series {s} out of range")));
            }
            let x = corpus.series(s);
            for &o in &offsets {
                data.extend_from_slice(&x[o * d..(o + window) * d]);
            }
        }
        let x = Tensor::new(vec![chunk.len() * offsets.len(), window, d], data)?;
        let z = model.posterior_means(&x)?;
        for (local, _) in chunk.iter().enumerate() {
            let b = chunk_idx * CHUNK + local;
            let mut covered = 0;
            for (w, &o) in offsets.iter().enumerate() {
                let row = local * offsets.len() + w;
                for step in covered.max(o)..o + window {
                    for j in 0..m {
                        means[(b * m + j) * t + step] = z.data()[(row * window + step - o) * m + j];
                    }
                }
                covered = o + window;
            }
        }
    }
    Ok(Embedding {
        series: series.to_vec(),
        means: Tensor::new(vec![series.len(), m, t], means)?,
    })
}
