//! Deterministic training and embedding.

mod batches;
mod config;
mod run;

pub use batches::{batch_tensor, make_batches, Subsection};
pub use config::{channel_length_scales, ModelSection, RunConfig, SubsectionMode, DEFAULT_PRIOR_JITTER};
pub use run::{
    embed, load_run, read_train_log, train, train_on, window_offsets, Embedding, LogEntry, PriorCache, RunLock,
    RunManifest, TrainOutcome, TrainedRun, CHECKPOINT_DIR, CONFIG_FILE, KL_CONVENTION, LOCK_FILE, RUN_MANIFEST,
    TIMING_LOG, TRAIN_LOG,
};
