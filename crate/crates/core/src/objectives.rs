//! Translation and contrastive losses and their weighted combination.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::corpus::{MtPair, StTriplet, TokenSequence, BOS, EOS, PAD};
use crate::error::{Error, Result};
use crate::model::{Chimera, Packed, SemanticMemory, Session, Source};
use crate::tensor::{Graph, Tensor, Var};

/// Eps guarding zero rows in cosine similarities.
pub const COSINE_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub st: f64,
    pub mt: f64,
    pub ctr: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { st: 1.0, mt: 1.0, ctr: 1.0 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, w) in [("st", self.st), ("mt", self.mt), ("ctr", self.ctr)] {
            if !(w >= 0.0) || !w.is_finite() {
                return Err(Error::Config(alloc::format!("loss weight {name} = {w} must be finite and nonnegative")));
            }
        }
        Ok(())
    }

    /// `((st·λst) + (mt·λmt)) + (ctr·λctr)`, the order used on the graph.
    pub fn combine(&self, st: f64, mt: f64, ctr: f64) -> f64 {
        ((self.st * st) + (self.mt * mt)) + (self.ctr * ctr)
    }
}

/// Loss components of one update. A disabled component is reported as 0.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub total: f64,
    pub st: f64,
    pub mt: f64,
    pub ctr: f64,
    /// Non-pad target tokens behind `st` and `mt`.
    pub st_tokens: usize,
    pub mt_tokens: usize,
    /// Speech/text pairs behind `ctr`.
    pub ctr_pairs: usize,
}

/// Label-smoothing and temperature settings shared by all losses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub label_smoothing: f64,
    /// Contrastive temperature scale `τ`.
    pub tau: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self { label_smoothing: 0.1, tau: 1.0 }
    }
}

/// Decoder input `BOS y` and training targets `y EOS`.
pub fn teacher_forcing(target: &TokenSequence) -> (Vec<u32>, Vec<u32>) {
    let mut input = Vec::with_capacity(target.len() + 1);
    input.push(BOS);
    input.extend_from_slice(target.ids());
    let mut output = target.ids().to_vec();
    output.push(EOS);
    (input, output)
}

/// Mean over non-pad tokens of the label-smoothed negative log-likelihood.
pub fn nll_loss(logits: &Tensor, targets: &[u32], pad: u32, smoothing: f64) -> Result<f64> {
    let mut g = Graph::new();
    let x = g.constant(logits.clone());
    let targets: Vec<usize> = targets.iter().map(|&t| t as usize).collect();
    let l = g.cross_entropy(x, &targets, Some(pad as usize), smoothing)?;
    Ok(g.item(l).expect("scalar loss"))
}

/// Graph-level translation loss: packed memories, one target per memory.
/// Returns the loss node and the number of target tokens.
pub fn translation_loss(s: &mut Session<'_>, memory: &Packed, targets: &[&TokenSequence], smoothing: f64) -> Result<(Var, usize)> {
    let mut inputs = Vec::with_capacity(targets.len());
    let mut outputs = Vec::new();
    for t in targets {
        let (i, o) = teacher_forcing(t);
        inputs.push(i);
        outputs.extend(o.into_iter().map(|v| v as usize));
    }
    let refs: Vec<&[u32]> = inputs.iter().map(Vec::as_slice).collect();
    let logits = s.decode(memory, &refs)?;
    let count = outputs.iter().filter(|&&t| t != PAD as usize).count();
    Ok((s.graph.cross_entropy(logits.var, &outputs, Some(PAD as usize), smoothing)?, count))
}

/// ST loss on the speech path. Also returns the speech memories for reuse.
pub fn st_loss_graph(s: &mut Session<'_>, batch: &[&StTriplet], smoothing: f64) -> Result<(Var, usize, Packed)> {
    if batch.is_empty() {
        return Err(Error::Empty("ST batch"));
    }
    let sources: Vec<Source<'_>> = batch.iter().map(|t| Source::Speech(&t.speech)).collect();
    let h = s.encode(&sources)?;
    let memory = s.project(&h)?.memory;
    let targets: Vec<&TokenSequence> = batch.iter().map(|t| &t.translation).collect();
    let (loss, n) = translation_loss(s, &memory, &targets, smoothing)?;
    Ok((loss, n, memory))
}

/// MT loss on the text path for `(source, target)` pairs.
pub fn mt_loss_graph(s: &mut Session<'_>, batch: &[(&TokenSequence, &TokenSequence)], smoothing: f64) -> Result<(Var, usize)> {
    if batch.is_empty() {
        return Err(Error::Empty("MT batch"));
    }
    let sources: Vec<Source<'_>> = batch.iter().map(|(u, _)| Source::Text(u)).collect();
    let h = s.encode(&sources)?;
    let memory = s.project(&h)?.memory;
    let targets: Vec<&TokenSequence> = batch.iter().map(|(_, v)| *v).collect();
    translation_loss(s, &memory, &targets, smoothing)
}

/// Bi-modal contrastive loss between packed text and speech memories of
/// the same pairs. Per pair, `S = τ·T̂Ŝᵀ` over the `m` normalized slots and
/// the loss is the summed cross-entropy of every row and every column
/// against its own index; the result is the mean over pairs.
pub fn contrastive_loss_graph(g: &mut Graph, text: &Packed, speech: &Packed, tau: f64) -> Result<Var> {
    if !(tau >= 0.0) || !tau.is_finite() {
        return Err(Error::Config(alloc::format!("contrastive temperature {tau} must be finite and nonnegative")));
    }
    if text.segments.len() != speech.segments.len() || text.segments.is_empty() {
        return Err(Error::Mismatch(alloc::format!(
            "{} text memories for {} speech memories",
            text.segments.len(),
            speech.segments.len()
        )));
    }
    let tn = g.normalize_rows(text.var, COSINE_EPS)?;
    let sn = g.normalize_rows(speech.var, COSINE_EPS)?;
    let mut terms = Vec::with_capacity(text.segments.len());
    for (ts, ss) in text.segments.iter().zip(&speech.segments) {
        if ts.len != ss.len {
            return Err(Error::Mismatch(alloc::format!("memory lengths {} and {} differ", ts.len, ss.len)));
        }
        let m = ts.len;
        let t = g.slice_rows(tn, ts.start, ts.end())?;
        let s = g.slice_rows(sn, ss.start, ss.end())?;
        let sim = g.matmul_t(t, s, false, true)?;
        let sim = g.scale(sim, tau)?;
        let diag: Vec<usize> = (0..m).collect();
        let rows = g.cross_entropy(sim, &diag, None, 0.0)?;
        let sim_t = g.transpose(sim)?;
        let cols = g.cross_entropy(sim_t, &diag, None, 0.0)?;
        let both = g.add(rows, cols)?;
        terms.push(g.scale(both, m as f64)?);
    }
    let mut sum = terms[0];
    for &t in &terms[1..] {
        sum = g.add(sum, t)?;
    }
    Ok(g.scale(sum, 1.0 / terms.len() as f64)?)
}

/// Contrastive loss of one pair of memories.
pub fn contrastive_loss(text: &SemanticMemory, speech: &SemanticMemory, tau: f64) -> Result<f64> {
    if text.values.shape() != speech.values.shape() {
        return Err(Error::Mismatch(alloc::format!(
            "memory shapes {:?} and {:?} differ",
            text.values.shape(),
            speech.values.shape()
        )));
    }
    let mut g = Graph::new();
    let seg = alloc::vec![crate::tensor::Segment::new(0, text.values.rows())];
    let t = Packed { var: g.constant(text.values.clone()), segments: seg.clone() };
    let s = Packed { var: g.constant(speech.values.clone()), segments: seg };
    let l = contrastive_loss_graph(&mut g, &t, &s, tau)?;
    Ok(g.item(l).expect("scalar loss"))
}

/// `((λst·st) + (λmt·mt)) + (λctr·ctr)` on the graph, skipping zero-weight
/// terms. At least one term must be present.
pub fn total_loss_graph(g: &mut Graph, weights: &LossWeights, st: Option<Var>, mt: Option<Var>, ctr: Option<Var>) -> Result<Var> {
    weights.validate()?;
    let mut total: Option<Var> = None;
    for (w, term) in [(weights.st, st), (weights.mt, mt), (weights.ctr, ctr)] {
        let Some(term) = term.filter(|_| w != 0.0) else { continue };
        let scaled = g.scale(term, w)?;
        total = Some(match total {
            Some(acc) => g.add(acc, scaled)?,
            None => scaled,
        });
    }
    total.ok_or(Error::Config("every loss component is disabled".into()))
}

/// Combines component losses into a report; the total is computed in the
/// same order as [`total_loss_graph`].
pub fn total_loss(components: &LossReport, weights: &LossWeights) -> Result<LossReport> {
    weights.validate()?;
    for v in [components.st, components.mt, components.ctr] {
        if !v.is_finite() {
            return Err(Error::Config(alloc::format!("component loss {v} is not finite")));
        }
    }
    Ok(LossReport { total: weights.combine(components.st, components.mt, components.ctr), ..*components })
}

/// Token-weighted ST loss of a batch, evaluated without gradients.
pub fn st_loss(model: &Chimera, batch: &[&StTriplet], smoothing: f64) -> Result<f64> {
    let mut s = model.inference();
    let (l, _, _) = st_loss_graph(&mut s, batch, smoothing)?;
    Ok(s.graph.item(l).expect("scalar loss"))
}

/// Token-weighted MT loss of a batch, evaluated without gradients.
pub fn mt_loss(model: &Chimera, batch: &[&MtPair], smoothing: f64) -> Result<f64> {
    let mut s = model.inference();
    let pairs: Vec<_> = batch.iter().map(|p| (&p.source, &p.target)).collect();
    let (l, _) = mt_loss_graph(&mut s, &pairs, smoothing)?;
    Ok(s.graph.item(l).expect("scalar loss"))
}
