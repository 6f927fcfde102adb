//! Synthetic sequences with known ground-truth factors of variation.

mod corpus;
mod factors;
mod labels;
mod render;

pub use corpus::{
    build_corpus, generate_corpus, Corpus, CorpusConfig, CorpusMetadata, Renderer, Split, SplitRanges,
    FACTOR_INDICES, LABELS, METADATA, OBSERVATIONS, TRACES,
};
pub use factors::{quantize, sample_factor_traces, Cardinality, ContinuousMarker, FactorSpec, FactorTrace};
pub use labels::Labeler;
pub use render::{render_lookup, render_mixer, IngestedDataset, Mixer, MixerSpec};
