use alloc::vec;
use alloc::vec::Vec;


use super::pca::Pca;
use crate::corpus::StTriplet;
use crate::error::{Error, Result};
use crate::model::{argmax, Chimera, Modality, Source};
use crate::tensor::Tensor;

pub const MAX_EXPORT_SAMPLES: usize = 100;

/// One memory of one sample with the 2-D PCA coordinates of its rows.
#[derive(Debug, Clone, PartialEq)]
pub struct MemoryRecord {
    pub sample: usize,
    pub modality: Modality,
    pub memory: Tensor,
    pub coords: Vec<[f64; 2]>,
}

/// Text and speech memories of paired samples, projected with one PCA fitted
/// on every dumped memory row.
#[derive(Debug, Clone, PartialEq)]
pub struct MemoryDump {
    pub records: Vec<MemoryRecord>,
    pub pca: Pca,
}

/// Memories of the first `min(n_samples, 100)` triplets, text then speech per
/// sample.
pub fn export_memories(model: &Chimera, triplets: &[StTriplet], n_samples: usize) -> Result<MemoryDump> {
    let n = n_samples.min(MAX_EXPORT_SAMPLES).min(triplets.len());
    if n == 0 {
        return Err(Error::Empty("export samples"));
    }
    let chosen = &triplets[..n];
    let text: Vec<Source<'_>> = chosen.iter().map(|t| Source::Text(&t.transcript)).collect();
    let speech: Vec<Source<'_>> = chosen.iter().map(|t| Source::Speech(&t.speech)).collect();
    let text = super::memories_chunked(model, &text)?;
    let speech = super::memories_chunked(model, &speech)?;
    let mut records = Vec::with_capacity(2 * n);
    for (i, (t, s)) in text.into_iter().zip(speech).enumerate() {
        records.push(MemoryRecord { sample: i, modality: Modality::Text, memory: t.values, coords: Vec::new() });
        records.push(MemoryRecord { sample: i, modality: Modality::Speech, memory: s.values, coords: Vec::new() });
    }
    let rows: Vec<&[f64]> = records.iter().flat_map(|r| (0..r.memory.rows()).map(move |k| r.memory.row(k))).collect();
    let pca = Pca::fit(&rows, 2)?;
    for r in &mut records {
        r.coords = (0..r.memory.rows())
            .map(|k| {
                let z = pca.transform(r.memory.row(k));
                [z[0], z[1]]
            })
            .collect();
    }
    Ok(MemoryDump { records, pca })
}

/// Final projection-layer attention of one triplet, averaged over heads.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionDump {
    /// `m × l_text`, one distribution per memory slot.
    pub text: Tensor,
    /// `m × l_speech` over downsampled speech positions.
    pub speech: Tensor,
    /// `l_text × l_speech`: `Σ_k text[k][i]·speech[k][j]`.
    pub products: Tensor,
    /// `l_text × l_speech × m`: each slot's share of the product.
    pub mixing: Tensor,
}

fn final_attention(model: &Chimera, source: Source<'_>) -> Result<Tensor> {
    let mut s = model.inference();
    let h = s.encode(&[source])?;
    let p = s.project(&h)?;
    let (layout, probs) = s.graph.attention_probs(p.attention).ok_or(Error::Empty("attention record"))?;
    let (q, k) = (layout.query_segments[0].len, layout.key_segments[0].len);
    let mut avg = vec![0.0; q * k];
    for head in 0..layout.heads {
        for (a, p) in avg.iter_mut().zip(layout.block(probs, 0, head)) {
            *a += p / layout.heads as f64;
        }
    }
    Ok(Tensor::new(vec![q, k], avg)?)
}

pub fn export_attention(model: &Chimera, triplet: &StTriplet) -> Result<AttentionDump> {
    let text = final_attention(model, Source::Text(&triplet.transcript))?;
    let speech = final_attention(model, Source::Speech(&triplet.speech))?;
    let (products, mixing) = attention_products(&text, &speech)?;
    Ok(AttentionDump { text, speech, products, mixing })
}

/// Pairwise products of two per-slot attention maps and the per-slot mixing
/// weights of each cell. A cell with zero total mass mixes uniformly.
pub fn attention_products(text: &Tensor, speech: &Tensor) -> Result<(Tensor, Tensor)> {
    let m = text.rows();
    if speech.rows() != m || text.shape().len() != 2 || speech.shape().len() != 2 {
        return Err(Error::Mismatch("attention maps need the same slots".into()));
    }
    let (lt, ls) = (text.cols(), speech.cols());
    let mut products = vec![0.0; lt * ls];
    let mut mixing = vec![0.0; lt * ls * m];
    for i in 0..lt {
        for j in 0..ls {
            let cell = &mut mixing[(i * ls + j) * m..(i * ls + j + 1) * m];
            for (k, w) in cell.iter_mut().enumerate() {
                *w = text.get(k, i) * speech.get(k, j);
            }
            let total: f64 = cell.iter().sum();
            products[i * ls + j] = total;
            for w in cell.iter_mut() {
                *w = if total > 0.0 { *w / total } else { 1.0 / m as f64 };
            }
        }
    }
    Ok((Tensor::new(vec![lt, ls], products)?, Tensor::new(vec![lt, ls, m], mixing)?))
}

/// Fraction of text positions whose largest product lies within `band`
/// speech positions of the proportional diagonal.
pub fn diagonal_band_fraction(products: &Tensor, band: f64) -> f64 {
    let (lt, ls) = (products.rows(), products.cols());
    if lt == 0 {
        return 0.0;
    }
    let hits = (0..lt)
        .filter(|&i| {
            let expected = (i as f64 + 0.5) * ls as f64 / lt as f64 - 0.5;
            (argmax(products.row(i)) as f64 - expected).abs() <= band
        })
        .count();
    hits as f64 / lt as f64
}
