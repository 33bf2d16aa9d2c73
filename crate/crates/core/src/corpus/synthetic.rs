//! Seeded bi-modal toy corpus: a latent token sequence is the transcript,
//! its token-shifted image is the translation, and the "speech" is a run of
//! noisy per-token prototype frames.

use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{filter_pair, FrameSequence, MtPair, StTriplet, TokenSequence, Vocabulary};
use crate::error::{Error, Result};

const FIRST_CONTENT: u32 = 4;
const MT_STREAM_BASE: u64 = 1 << 40;
/// Largest f32 strictly below 1.
const FRAME_MAX: f32 = 1.0 - f32::EPSILON / 2.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    /// Number of speech/transcript/translation triplets.
    pub n_samples: usize,
    /// Number of additional text-only pairs.
    pub n_mt_pairs: usize,
    pub vocab_size: usize,
    /// Inclusive token-count range.
    pub len_range: (usize, usize),
    /// Inclusive range of frames emitted per token.
    pub frames_per_token_range: (usize, usize),
    pub feature_dim: usize,
    pub noise_sigma: f64,
    /// Translation id = transcript id shifted by this amount within the content range.
    pub target_shift: u32,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            n_samples: 64,
            n_mt_pairs: 64,
            vocab_size: 32,
            len_range: (3, 8),
            frames_per_token_range: (2, 4),
            feature_dim: 16,
            noise_sigma: 0.05,
            target_shift: 7,
            seed: 1,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(msg.into()));
        if self.vocab_size < 8 {
            return bad("vocab_size must be at least 8");
        }
        if self.len_range.0 == 0 || self.len_range.0 > self.len_range.1 {
            return bad("len_range must be a nonempty range of positive lengths");
        }
        if self.frames_per_token_range.0 == 0 || self.frames_per_token_range.0 > self.frames_per_token_range.1 {
            return bad("frames_per_token_range must be a nonempty range of positive counts");
        }
        if self.feature_dim == 0 {
            return bad("feature_dim must be positive");
        }
        if !(self.noise_sigma >= 0.0) || !self.noise_sigma.is_finite() {
            return bad("noise_sigma must be finite and nonnegative");
        }
        Ok(())
    }

    fn content_size(&self) -> u32 {
        self.vocab_size as u32 - FIRST_CONTENT
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCorpus {
    pub vocab: Vocabulary,
    pub triplets: Vec<StTriplet>,
    pub mt_pairs: Vec<MtPair>,
    /// Prototype frame of each content token, indexed by `id - 4`.
    pub prototypes: Vec<Vec<f32>>,
    /// For each triplet, the transcript position every frame was emitted for.
    pub alignments: Vec<Vec<usize>>,
}

/// Translation id of a transcript id.
pub fn target_token(id: u32, vocab_size: usize, shift: u32) -> u32 {
    if id < FIRST_CONTENT {
        return id;
    }
    let c = vocab_size as u32 - FIRST_CONTENT;
    FIRST_CONTENT + (id - FIRST_CONTENT + shift % c) % c
}

/// Inverse of [`target_token`].
pub fn source_token(id: u32, vocab_size: usize, shift: u32) -> u32 {
    if id < FIRST_CONTENT {
        return id;
    }
    let c = vocab_size as u32 - FIRST_CONTENT;
    FIRST_CONTENT + (id - FIRST_CONTENT + c - shift % c) % c
}

fn latent_sequence(rng: &mut ChaCha8Rng, cfg: &SyntheticConfig) -> Vec<u32> {
    let len = rng.gen_range(cfg.len_range.0..=cfg.len_range.1);
    (0..len).map(|_| FIRST_CONTENT + rng.gen_range(0..cfg.content_size())).collect()
}

fn translate(ids: &[u32], cfg: &SyntheticConfig) -> Vec<u32> {
    ids.iter().map(|&id| target_token(id, cfg.vocab_size, cfg.target_shift)).collect()
}

fn stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Builds the corpus. Every record depends only on `(seed, index)`.
pub fn generate_synthetic_corpus(cfg: &SyntheticConfig) -> Result<SyntheticCorpus> {
    cfg.validate()?;
    let vocab = Vocabulary::synthetic(cfg.vocab_size)?;
    let mut proto_rng = stream(cfg.seed, 0);
    let prototypes: Vec<Vec<f32>> = (0..cfg.content_size())
        .map(|_| (0..cfg.feature_dim).map(|_| proto_rng.gen_range(-0.5f32..0.5)).collect())
        .collect();
    let noise = Normal::new(0.0, cfg.noise_sigma).map_err(|e| Error::Config(alloc::format!("{e}")))?;

    let mut triplets = Vec::with_capacity(cfg.n_samples);
    let mut alignments = Vec::with_capacity(cfg.n_samples);
    for i in 0..cfg.n_samples {
        let mut rng = stream(cfg.seed, 1 + i as u64);
        let z = latent_sequence(&mut rng, cfg);
        let y = translate(&z, cfg);
        let mut frames = Vec::new();
        let mut align = Vec::new();
        for (pos, &id) in z.iter().enumerate() {
            let reps = rng.gen_range(cfg.frames_per_token_range.0..=cfg.frames_per_token_range.1);
            let proto = &prototypes[(id - FIRST_CONTENT) as usize];
            for _ in 0..reps {
                for &p in proto {
                    let v = if cfg.noise_sigma > 0.0 { p as f64 + noise.sample(&mut rng) } else { p as f64 };
                    frames.push((v as f32).clamp(-1.0, FRAME_MAX));
                }
                align.push(pos);
            }
        }
        let speech = FrameSequence::new(align.len(), cfg.feature_dim, frames)?;
        triplets.push(StTriplet { speech, transcript: TokenSequence::new(z)?, translation: TokenSequence::new(y)? });
        alignments.push(align);
    }

    let mut mt_pairs = Vec::with_capacity(cfg.n_mt_pairs);
    for j in 0..cfg.n_mt_pairs {
        let mut rng = stream(cfg.seed, MT_STREAM_BASE + j as u64);
        let u = latent_sequence(&mut rng, cfg);
        let v = translate(&u, cfg);
        let pair = MtPair { source: TokenSequence::new(u)?, target: TokenSequence::new(v)? };
        if filter_pair(&pair.source, &pair.target) {
            mt_pairs.push(pair);
        }
    }
    Ok(SyntheticCorpus { vocab, triplets, mt_pairs, prototypes, alignments })
}
