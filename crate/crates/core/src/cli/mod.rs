//! Command-line front end: corpus synthesis, training, evaluation and
//! cross-run reports.
//!
//! Exit codes: 0 on success, 1 for usage or configuration errors, 2 for
//! runtime and numerical failures.

pub mod eval;
pub mod figures;
pub mod report;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};

use crate::dci::PredictorKind;
use crate::error::{Error, Result};
use crate::synth::{build_corpus, Corpus, CorpusConfig};
use crate::train::{load_run, train, RunConfig, RunLock};
use eval::{evaluate_dci, evaluate_downstream, write_dci_figures, DciOptions, Metrics};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "dgpvae", version, about = "Disentangled GP-VAE for multivariate time series")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic corpus from a corpus config.
    Synth {
        #[arg(long)]
        config: PathBuf,
        /// Corpus directory to write.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train a model from a run config.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Overrides `output_dir` from the config.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Overrides `corpus` from the config.
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// DCI scores of a trained run on the corpus test split.
    EvalDci {
        /// Run directory written by `train`.
        #[arg(long)]
        run: PathBuf,
        /// Defaults to the corpus the run was trained on.
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Predictor::Lasso)]
        predictor: Predictor,
        /// `feature,concept` CSV mapping observed features `x0..` to concepts.
        #[arg(long)]
        concepts: Option<PathBuf>,
        /// Seed for the predictor split; defaults to the run seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// AUROC of a linear classifier on latent summaries.
    EvalDownstream {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        corpus: Option<PathBuf>,
        /// Permute the labels first (a chance-level control).
        #[arg(long)]
        shuffle_labels: bool,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Aggregate metrics of runs that differ only in seed.
    Report {
        /// Run directories.
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        /// Directory for report.csv, summary.csv, report.json and figures.
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Predictor {
    Lasso,
    BoostedStumps,
}

impl From<Predictor> for PredictorKind {
    fn from(p: Predictor) -> Self {
        match p {
            Predictor::Lasso => PredictorKind::Lasso,
            Predictor::BoostedStumps => PredictorKind::BoostedStumps,
        }
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code. Diagnostics go to stderr as one line.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_USAGE,
            };
        }
    };
    match run(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {}", one_line(&e.to_string()));
            exit_code(&e)
        }
    }
}

pub fn exit_code(error: &Error) -> i32 {
    match error {
        Error::Usage(_) | Error::Config(_) => EXIT_USAGE,
        _ => EXIT_RUNTIME,
    }
}

fn one_line(message: &str) -> String {
    message.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn require_file(path: &Path, what: &str) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::Usage(format!("{what} {} does not exist", path.display())))
    }
}

fn require_dir(path: &Path, what: &str) -> Result<()> {
    if path.is_dir() {
        Ok(())
    } else {
        Err(Error::Usage(format!("{what} {} does not exist", path.display())))
    }
}

pub fn read_corpus_config(path: &Path) -> Result<CorpusConfig> {
    require_file(path, "config file")?;
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

pub fn read_run_config(path: &Path) -> Result<RunConfig> {
    require_file(path, "config file")?;
    RunConfig::read(path)
}

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::Synth { config, out, seed } => cmd_synth(&config, &out, seed).map(|_| ()),
        Command::Train {
            config,
            out,
            corpus,
            seed,
        } => cmd_train(&config, out, corpus, seed).map(|_| ()),
        Command::EvalDci {
            run,
            corpus,
            predictor,
            concepts,
            seed,
        } => cmd_eval_dci(
            &run,
            corpus.as_deref(),
            &DciOptions {
                predictor: predictor.into(),
                seed,
                concepts,
            },
        )
        .map(|_| ()),
        Command::EvalDownstream {
            run,
            corpus,
            shuffle_labels,
            seed,
        } => cmd_eval_downstream(&run, corpus.as_deref(), seed, shuffle_labels).map(|_| ()),
        Command::Report { runs, out } => report::cmd_report(&runs, &out).map(|_| ()),
    }
}

pub fn cmd_synth(config: &Path, out: &Path, seed: Option<u64>) -> Result<Corpus> {
    let mut cfg = read_corpus_config(config)?;
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    let corpus = build_corpus(&cfg, out)?;
    log::info!("wrote {} series to {}", corpus.n_series(), out.display());
    Ok(corpus)
}

pub fn cmd_train(
    config: &Path,
    out: Option<PathBuf>,
    corpus: Option<PathBuf>,
    seed: Option<u64>,
) -> Result<PathBuf> {
    let mut cfg = read_run_config(config)?;
    if let Some(out) = out {
        cfg.output_dir = out;
    }
    if let Some(corpus) = corpus {
        cfg.corpus = corpus;
    }
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    require_dir(&cfg.corpus, "corpus directory")?;
    let outcome = train(&cfg)?;
    log::info!(
        "trained {} steps, final ELBO {:.4}; run written to {}",
        outcome.log.len(),
        outcome.manifest.final_elbo.total,
        cfg.output_dir.display()
    );
    Ok(cfg.output_dir)
}

fn load_corpus_for(run: &crate::train::TrainedRun, corpus: Option<&Path>) -> Result<Corpus> {
    let path = corpus.unwrap_or(&run.config.corpus);
    require_dir(path, "corpus directory")?;
    Corpus::load(path)
}

pub fn cmd_eval_dci(run_dir: &Path, corpus: Option<&Path>, options: &DciOptions) -> Result<Metrics> {
    require_dir(run_dir, "run directory")?;
    if let Some(path) = &options.concepts {
        require_file(path, "concept map")?;
    }
    let _lock = RunLock::acquire(run_dir)?;
    let run = load_run(run_dir)?;
    let corpus = load_corpus_for(&run, corpus)?;
    let evaluation = evaluate_dci(&run, &corpus, options)?;
    write_dci_figures(run_dir, &corpus, &evaluation)?;
    let mut metrics = Metrics::load_or_default(run_dir, &run)?;
    metrics.dci = Some(evaluation.dci);
    metrics.grouped_dci = evaluation.grouped;
    metrics.save(run_dir)?;
    Ok(metrics)
}

pub fn cmd_eval_downstream(
    run_dir: &Path,
    corpus: Option<&Path>,
    seed: Option<u64>,
    shuffle_labels: bool,
) -> Result<Metrics> {
    require_dir(run_dir, "run directory")?;
    let _lock = RunLock::acquire(run_dir)?;
    let run = load_run(run_dir)?;
    let corpus = load_corpus_for(&run, corpus)?;
    let section = evaluate_downstream(&run, &corpus, seed, shuffle_labels)?;
    let mut metrics = Metrics::load_or_default(run_dir, &run)?;
    metrics.downstream = Some(section);
    metrics.save(run_dir)?;
    Ok(metrics)
}
