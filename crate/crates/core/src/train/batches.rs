//! Subsection minibatches.

use rand::seq::SliceRandom;
use rand::Rng;

use super::config::SubsectionMode;
use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::synth::Corpus;

/// A contiguous window `[offset, offset + len)` of one series.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Subsection {
    pub series: usize,
    pub offset: usize,
    pub len: usize,
}

/// One epoch of batches over `series`, in an order drawn from `rng`.
///
/// Sequential mode tiles each series into `⌊T/L⌋` windows; random-crop
/// mode draws the same number of windows per series at uniform offsets.
/// The last batch may be smaller than `batch_size`.
pub fn make_batches<R: Rng + ?Sized>(
    series: &[usize],
    series_length: usize,
    subsection_length: usize,
    batch_size: usize,
    mode: SubsectionMode,
    rng: &mut R,
) -> Result<Vec<Vec<Subsection>>> {
    if subsection_length == 0 || subsection_length > series_length {
        return Err(Error::Config(format!(
            "subsection length {subsection_length} must be in 1..={series_length}"
        )));
    }
    if batch_size == 0 {
        return Err(Error::Config("batch_size must be ≥ 1".into()));
    }
    let per_series = series_length / subsection_length;
    let mut items = Vec::with_capacity(series.len() * per_series);
    for &s in series {
        for k in 0..per_series {
            let offset = match mode {
                SubsectionMode::Sequential => k * subsection_length,
                SubsectionMode::RandomCrop => rng.gen_range(0..=series_length - subsection_length),
            };
            items.push(Subsection {
                series: s,
                offset,
                len: subsection_length,
            });
        }
    }
    items.shuffle(rng);
    Ok(items.chunks(batch_size).map(<[Subsection]>::to_vec).collect())
}

/// Observations of a batch as `(B, L, d)`.
pub fn batch_tensor(corpus: &Corpus, batch: &[Subsection]) -> Result<Tensor> {
    let len = batch.first().map_or(0, |s| s.len);
    let d = corpus.obs_dim();
    let mut data = Vec::with_capacity(batch.len() * len * d);
    for s in batch {
        if s.len != len || s.offset + s.len > corpus.series_length() || s.series >= corpus.n_series() {
            return Err(Error::Data(format!("subsection {s:?} does not fit the corpus")));
        }
        data.extend_from_slice(&corpus.series(s.series)[s.offset * d..(s.offset + s.len) * d]);
    }
    Tensor::new(vec![batch.len(), len, d], data)
}
