//! Corpus records, the shared vocabulary, synthetic data and batching.

mod batch;
mod synthetic;
mod vocab;

use alloc::vec::Vec;

pub use batch::{make_batches, Batch, BatchCaps};
pub use synthetic::{generate_synthetic_corpus, target_token, source_token, SyntheticConfig, SyntheticCorpus};
pub use vocab::{Vocabulary, BOS, EOS, PAD, UNK};

use crate::error::{Error, Result};

/// Vocabulary ids of one text sequence.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TokenSequence {
    ids: Vec<u32>,
}

impl TokenSequence {
    pub fn new(ids: Vec<u32>) -> Result<Self> {
        if ids.is_empty() {
            return Err(Error::Empty("token sequence"));
        }
        Ok(Self { ids })
    }

    pub fn ids(&self) -> &[u32] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Fails on the first id outside `0..vocab_size`.
    pub fn validate(&self, vocab_size: usize) -> Result<()> {
        match self.ids.iter().find(|&&id| id as usize >= vocab_size) {
            Some(&id) => Err(Error::Vocabulary { id, size: vocab_size }),
            None => Ok(()),
        }
    }

    /// Content ids with BOS/EOS/PAD stripped.
    pub fn content(&self) -> Vec<u32> {
        self.ids.iter().copied().filter(|&id| id != BOS && id != EOS && id != PAD).collect()
    }
}

/// Continuous speech-like input: `len × dim` frames with values in `[-1, 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameSequence {
    len: usize,
    dim: usize,
    data: Vec<f32>,
}

impl FrameSequence {
    pub fn new(len: usize, dim: usize, data: Vec<f32>) -> Result<Self> {
        if len == 0 || dim == 0 {
            return Err(Error::Empty("frame sequence"));
        }
        if data.len() != len * dim {
            return Err(Error::Mismatch(alloc::format!(
                "frame data has {} values, expected {len}×{dim}",
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !(-1.0..1.0).contains(*v)) {
            return Err(Error::Config(alloc::format!("frame value {v} outside [-1, 1)")));
        }
        Ok(Self { len, dim, data })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }
}

/// Speech, transcript and translation of one utterance.
#[derive(Debug, Clone, PartialEq)]
pub struct StTriplet {
    pub speech: FrameSequence,
    pub transcript: TokenSequence,
    pub translation: TokenSequence,
}

/// Source/target sentence pair for text translation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MtPair {
    pub source: TokenSequence,
    pub target: TokenSequence,
}

/// Length limit and ratio bounds applied to text pairs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairFilter {
    pub max_tokens: usize,
    pub min_ratio: f64,
    pub max_ratio: f64,
}

impl Default for PairFilter {
    fn default() -> Self {
        Self { max_tokens: 250, min_ratio: 2.0 / 3.0, max_ratio: 1.5 }
    }
}

impl PairFilter {
    /// Keep iff both sides have at most `max_tokens` tokens and
    /// `source_len / target_len` lies in `[min_ratio, max_ratio]`.
    pub fn keep(&self, source_len: usize, target_len: usize) -> bool {
        if source_len == 0 || target_len == 0 {
            return false;
        }
        if source_len > self.max_tokens || target_len > self.max_tokens {
            return false;
        }
        // relative slack keeps exact boundary ratios such as 2/3 inside the range
        let (s, t) = (source_len as f64, target_len as f64);
        s >= self.min_ratio * t - 1e-12 * t && s <= self.max_ratio * t + 1e-12 * t
    }
}

/// [`PairFilter::keep`] with the default bounds (250 tokens, ratio in [2/3, 3/2]).
pub fn filter_pair(source: &TokenSequence, target: &TokenSequence) -> bool {
    PairFilter::default().keep(source.len(), target.len())
}
