use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{argmax, SemanticMemory};
use crate::objectives::COSINE_EPS;
use crate::tensor::Tensor;

/// Diagonal versus off-diagonal similarity of a square similarity matrix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlignmentReport {
    pub diagonal_mean: f64,
    pub off_diagonal_mean: f64,
    /// `diagonal_mean - off_diagonal_mean`.
    pub margin: f64,
    /// Fraction of rows whose argmax is the diagonal entry.
    pub retrieval_accuracy: f64,
    pub size: usize,
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = libm::sqrt(a.iter().map(|x| x * x).sum::<f64>()).max(COSINE_EPS);
    let nb = libm::sqrt(b.iter().map(|x| x * x).sum::<f64>()).max(COSINE_EPS);
    dot / (na * nb)
}

/// Summary of an `n × n` similarity matrix given row by row.
pub fn summarize(sim: &[Vec<f64>]) -> Result<AlignmentReport> {
    let n = sim.len();
    if n == 0 || sim.iter().any(|r| r.len() != n) {
        return Err(Error::Mismatch("similarity matrix must be square and nonempty".into()));
    }
    let diagonal_mean = (0..n).map(|i| sim[i][i]).sum::<f64>() / n as f64;
    let off_diagonal_mean = if n > 1 {
        let total: f64 = (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| sim[i][j]).sum();
        total / (n * (n - 1)) as f64
    } else {
        0.0
    };
    let hits = (0..n).filter(|&i| argmax(&sim[i]) == i).count();
    Ok(AlignmentReport {
        diagonal_mean,
        off_diagonal_mean,
        margin: diagonal_mean - off_diagonal_mean,
        retrieval_accuracy: hits as f64 / n as f64,
        size: n,
    })
}

/// Sample-level similarity: `sim(i, j)` is the mean over slots `k` of
/// `cos(text_i[k], speech_j[k])`. Pair `i` is the diagonal.
pub fn sample_similarity(text: &[SemanticMemory], speech: &[SemanticMemory]) -> Result<Vec<Vec<f64>>> {
    if text.len() != speech.len() {
        return Err(Error::Mismatch(alloc::format!("{} text and {} speech memories", text.len(), speech.len())));
    }
    let shape = text.first().map(|m| m.values.shape().to_vec()).unwrap_or_default();
    if text.iter().chain(speech).any(|m| m.values.shape() != shape.as_slice()) {
        return Err(Error::Mismatch("memories differ in shape".into()));
    }
    let slots = |t: &Tensor| t.rows();
    Ok(text
        .iter()
        .map(|a| {
            speech
                .iter()
                .map(|b| (0..slots(&a.values)).map(|k| cosine(a.values.row(k), b.values.row(k))).sum::<f64>() / slots(&a.values) as f64)
                .collect()
        })
        .collect())
}

pub fn sample_alignment(text: &[SemanticMemory], speech: &[SemanticMemory]) -> Result<AlignmentReport> {
    summarize(&sample_similarity(text, speech)?)
}

/// Slot-level alignment within pairs: for each pair the `m × m` matrix
/// `cos(text[k], speech[j])`; statistics are averaged over pairs.
pub fn slot_alignment(text: &[SemanticMemory], speech: &[SemanticMemory]) -> Result<AlignmentReport> {
    if text.len() != speech.len() || text.is_empty() {
        return Err(Error::Mismatch(alloc::format!("{} text and {} speech memories", text.len(), speech.len())));
    }
    let mut acc = AlignmentReport { diagonal_mean: 0.0, off_diagonal_mean: 0.0, margin: 0.0, retrieval_accuracy: 0.0, size: 0 };
    for (a, b) in text.iter().zip(speech) {
        if a.values.shape() != b.values.shape() {
            return Err(Error::Mismatch("memories differ in shape".into()));
        }
        let m = a.values.rows();
        let sim: Vec<Vec<f64>> = (0..m).map(|k| (0..m).map(|j| cosine(a.values.row(k), b.values.row(j))).collect()).collect();
        let r = summarize(&sim)?;
        acc.diagonal_mean += r.diagonal_mean;
        acc.off_diagonal_mean += r.off_diagonal_mean;
        acc.retrieval_accuracy += r.retrieval_accuracy;
        acc.size = m;
    }
    let n = text.len() as f64;
    acc.diagonal_mean /= n;
    acc.off_diagonal_mean /= n;
    acc.retrieval_accuracy /= n;
    acc.margin = acc.diagonal_mean - acc.off_diagonal_mean;
    Ok(acc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Modality;
    use alloc::vec;

    fn mem(rows: &[Vec<f64>]) -> SemanticMemory {
        SemanticMemory { values: Tensor::from_rows(rows).unwrap(), modality: Modality::Text }
    }

    #[test]
    fn identical_pairs_retrieve_perfectly() {
        let a = mem(&[vec![1.0, 0.0], vec![0.0, 1.0]]);
        let b = mem(&[vec![0.0, 1.0], vec![1.0, 0.0]]);
        let r = sample_alignment(&[a.clone(), b.clone()], &[a.clone(), b.clone()]).unwrap();
        assert_eq!(r.diagonal_mean, 1.0);
        assert_eq!(r.off_diagonal_mean, 0.0);
        assert_eq!(r.retrieval_accuracy, 1.0);
        let s = slot_alignment(&[a.clone()], &[a]).unwrap();
        assert_eq!((s.margin, s.retrieval_accuracy), (1.0, 1.0));
    }

    #[test]
    fn summary_of_hand_matrix() {
        let r = summarize(&[vec![0.9, 0.1, 0.2], vec![0.3, 0.2, 0.5], vec![0.0, 0.0, 0.6]]).unwrap();
        assert!((r.diagonal_mean - (0.9 + 0.2 + 0.6) / 3.0).abs() < 1e-15);
        assert!((r.off_diagonal_mean - (0.1 + 0.2 + 0.3 + 0.5) / 6.0).abs() < 1e-15);
        assert!((r.retrieval_accuracy - 2.0 / 3.0).abs() < 1e-15);
    }
}
