//! Greedy and beam-search generation over any next-token scorer.

use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;

use crate::corpus::{BOS, EOS};
use crate::error::{Error, Result};

/// Source of next-token log-probabilities.
pub trait StepScorer {
    /// One log-probability row per prefix; every prefix starts with BOS.
    fn next_log_probs(&mut self, prefixes: &[&[u32]]) -> Result<Vec<Vec<f64>>>;
}

/// A generated sequence. `tokens` starts with BOS and ends with EOS unless
/// generation stopped at the length limit.
#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    pub tokens: Vec<u32>,
    /// Sum of per-token log-probabilities.
    pub score: f64,
    /// `score / generated_len^alpha`.
    pub normalized: f64,
}

impl Hypothesis {
    pub fn finished(&self) -> bool {
        self.tokens.last() == Some(&EOS) && self.tokens.len() > 1
    }

    /// Tokens without BOS and EOS.
    pub fn content(&self) -> &[u32] {
        let end = if self.finished() { self.tokens.len() - 1 } else { self.tokens.len() };
        &self.tokens[1..end]
    }
}

fn normalize(score: f64, generated: usize, alpha: f64) -> f64 {
    if alpha == 0.0 {
        score
    } else {
        score / libm::pow(generated as f64, alpha)
    }
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Argmax decoding of up to `max_len` generated tokens.
pub fn greedy_search(scorer: &mut impl StepScorer, max_len: usize) -> Result<Hypothesis> {
    if max_len == 0 {
        return Err(Error::Config("max_len must be at least 1".into()));
    }
    let mut tokens = vec![BOS];
    let mut score = 0.0;
    for _ in 0..max_len {
        let lp = scorer.next_log_probs(&[&tokens])?.swap_remove(0);
        let next = argmax(&lp);
        score += lp[next];
        tokens.push(next as u32);
        if next as u32 == EOS {
            break;
        }
    }
    Ok(Hypothesis { normalized: score, tokens, score })
}

/// Beam search: each step expands every live hypothesis over the whole
/// vocabulary. EOS candidates ranked within the top `beam` finish; the top
/// `beam` non-EOS candidates stay live. Candidate ties are broken by the
/// parent's rank, then by token id. Hypotheses still live at `max_len` are
/// finished by length. With `alpha == 0` the search stops as soon as the
/// best finished score reaches the best live score.
pub fn beam_search(scorer: &mut impl StepScorer, beam: usize, max_len: usize, alpha: f64) -> Result<Hypothesis> {
    if beam == 0 || max_len == 0 {
        return Err(Error::Config("beam and max_len must be at least 1".into()));
    }
    if !(alpha >= 0.0) {
        return Err(Error::Config("length-normalization alpha must be nonnegative".into()));
    }
    let mut live: Vec<(Vec<u32>, f64)> = vec![(vec![BOS], 0.0)];
    let mut finished: Vec<Hypothesis> = Vec::new();
    for step in 1..=max_len {
        let prefixes: Vec<&[u32]> = live.iter().map(|(t, _)| t.as_slice()).collect();
        let rows = scorer.next_log_probs(&prefixes)?;
        let mut candidates: Vec<(f64, usize, u32)> = Vec::new();
        for (h, row) in rows.iter().enumerate() {
            for (v, &lp) in row.iter().enumerate() {
                candidates.push((live[h].1 + lp, h, v as u32));
            }
        }
        candidates.sort_by(|a, b| {
            b.0.partial_cmp(&a.0).unwrap_or(Ordering::Equal).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2))
        });
        let mut next = Vec::with_capacity(beam);
        for (rank, &(score, h, v)) in candidates.iter().enumerate() {
            if v == EOS {
                if rank < beam {
                    let mut tokens = live[h].0.clone();
                    tokens.push(EOS);
                    finished.push(Hypothesis { tokens, score, normalized: normalize(score, step, alpha) });
                }
            } else if next.len() < beam {
                let mut tokens = live[h].0.clone();
                tokens.push(v);
                next.push((tokens, score));
            }
            if next.len() == beam && rank + 1 >= beam {
                break;
            }
        }
        live = next;
        if live.is_empty() {
            break;
        }
        if alpha == 0.0 {
            let best_finished = finished.iter().map(|h| h.score).fold(f64::NEG_INFINITY, f64::max);
            if best_finished >= live[0].1 {
                live.clear();
                break;
            }
        }
    }
    for (tokens, score) in live {
        let n = tokens.len() - 1;
        finished.push(Hypothesis { tokens, score, normalized: normalize(score, n, alpha) });
    }
    // earliest-found wins ties
    let mut best = 0;
    for (i, h) in finished.iter().enumerate() {
        if h.normalized > finished[best].normalized {
            best = i;
        }
    }
    Ok(finished.swap_remove(best))
}
