use alloc::vec::Vec;

use crate::corpus::TokenSequence;
use crate::error::{Error, Result};
use crate::model::{argmax, Chimera, SemanticMemory, Source};
use crate::objectives::teacher_forcing;

const CHUNK: usize = 32;

/// Fraction of target tokens (EOS included) that are the argmax of the
/// teacher-forced logits. Every source must have the same modality.
pub fn teacher_forced_accuracy(model: &Chimera, items: &[(Source<'_>, &TokenSequence)]) -> Result<f64> {
    let (mut hits, mut total) = (0usize, 0usize);
    for chunk in items.chunks(CHUNK) {
        let sources: Vec<Source<'_>> = chunk.iter().map(|(s, _)| *s).collect();
        let forced: Vec<(Vec<u32>, Vec<u32>)> = chunk.iter().map(|(_, t)| teacher_forcing(t)).collect();
        let mut s = model.inference();
        let h = s.encode(&sources)?;
        let p = s.project(&h)?;
        let inputs: Vec<&[u32]> = forced.iter().map(|(i, _)| i.as_slice()).collect();
        let logits = s.decode(&p.memory, &inputs)?;
        let values = s.graph.value(logits.var);
        for (seg, (_, out)) in logits.segments.iter().zip(&forced) {
            for (r, &y) in out.iter().enumerate() {
                hits += usize::from(argmax(values.row(seg.start + r)) == y as usize);
                total += 1;
            }
        }
    }
    if total == 0 {
        return Err(Error::Empty("evaluation set"));
    }
    Ok(hits as f64 / total as f64)
}

/// Memories for many same-modality sources, computed in chunks.
pub fn memories_chunked(model: &Chimera, sources: &[Source<'_>]) -> Result<Vec<SemanticMemory>> {
    let mut out = Vec::with_capacity(sources.len());
    for chunk in sources.chunks(CHUNK) {
        out.extend(model.memories(chunk)?);
    }
    Ok(out)
}

/// Greedy translations (content tokens only) of same-modality sources.
pub fn translate_greedy(model: &Chimera, sources: &[Source<'_>], max_len: usize) -> Result<Vec<Vec<u32>>> {
    let mut out = Vec::with_capacity(sources.len());
    for chunk in sources.chunks(CHUNK) {
        let mems = model.memories(chunk)?;
        out.extend(model.greedy_decode_batch(&mems, max_len)?);
    }
    Ok(out)
}

/// Fraction of greedy translations equal to their reference.
pub fn exact_match(model: &Chimera, items: &[(Source<'_>, &TokenSequence)], max_len: usize) -> Result<f64> {
    if items.is_empty() {
        return Err(Error::Empty("evaluation set"));
    }
    let sources: Vec<Source<'_>> = items.iter().map(|(s, _)| *s).collect();
    let hyps = translate_greedy(model, &sources, max_len)?;
    let hits = hyps.iter().zip(items).filter(|(h, (_, t))| h.as_slice() == t.ids()).count();
    Ok(hits as f64 / items.len() as f64)
}
