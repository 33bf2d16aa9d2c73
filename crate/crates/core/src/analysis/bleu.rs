use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Corpus-level BLEU with the in-repo conventions: whitespace tokens, no
/// smoothing, clipped n-gram counts summed over the corpus. An order for
/// which the hypotheses contain no n-grams at all is vacuous and counts as
/// precision 1, so self-BLEU is 100 even for very short corpora.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BleuReport {
    /// In `[0, 100]`.
    pub score: f64,
    /// Modified n-gram precisions `p1..p_max_n` as fractions.
    pub precisions: Vec<f64>,
    pub brevity_penalty: f64,
    pub hyp_len: usize,
    pub ref_len: usize,
}

fn ngram_counts<T: Ord>(tokens: &[T], n: usize) -> BTreeMap<&[T], usize> {
    let mut counts = BTreeMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

pub fn bleu<T: Ord, H: AsRef<[T]>, R: AsRef<[T]>>(hypotheses: &[H], references: &[R], max_n: usize) -> Result<BleuReport> {
    if hypotheses.len() != references.len() {
        return Err(Error::Mismatch(alloc::format!(
            "{} hypotheses for {} references",
            hypotheses.len(),
            references.len()
        )));
    }
    if references.is_empty() {
        return Err(Error::Empty("reference corpus"));
    }
    if references.iter().any(|r| r.as_ref().is_empty()) {
        return Err(Error::Empty("reference sentence"));
    }
    if max_n == 0 {
        return Err(Error::Config("max_n must be at least 1".into()));
    }
    let mut matches = alloc::vec![0usize; max_n];
    let mut totals = alloc::vec![0usize; max_n];
    let (mut c, mut r) = (0usize, 0usize);
    for (h, rf) in hypotheses.iter().zip(references) {
        let (h, rf) = (h.as_ref(), rf.as_ref());
        c += h.len();
        r += rf.len();
        for n in 1..=max_n {
            let hyp = ngram_counts(h, n);
            let refc = ngram_counts(rf, n);
            for (gram, &count) in &hyp {
                matches[n - 1] += count.min(refc.get(gram).copied().unwrap_or(0));
                totals[n - 1] += count;
            }
        }
    }
    let precisions: Vec<f64> = matches
        .iter()
        .zip(&totals)
        .map(|(&m, &t)| if t == 0 { 1.0 } else { m as f64 / t as f64 })
        .collect();
    let brevity_penalty = if c == 0 {
        0.0
    } else if c < r {
        libm::exp(1.0 - r as f64 / c as f64)
    } else {
        1.0
    };
    let score = if c == 0 || precisions.iter().any(|&p| p == 0.0) {
        0.0
    } else {
        let mean_log = precisions.iter().map(|&p| libm::log(p)).sum::<f64>() / max_n as f64;
        (100.0 * brevity_penalty * libm::exp(mean_log)).min(100.0)
    };
    Ok(BleuReport { score, precisions, brevity_penalty, hyp_len: c, ref_len: r })
}
