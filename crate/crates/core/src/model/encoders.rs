//! Text and speech branches and the shared Transformer encoder.

use alloc::format;
use alloc::vec::Vec;

use rand::Rng;

use super::config::{ConvStackConfig, ModelConfig};
use crate::corpus::FrameSequence;
use crate::error::{Error, Result};
use crate::nn::{normal, packed_positions, residual_norm, Bound, FeedForward, LayerNorm, MultiHeadAttention, ParamGroup, ParamId, ParamStore};
use crate::tensor::{Graph, Segment, Tensor, Var};

/// Token embedding table scaled by `sqrt(d)`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct TextEmbedding {
    pub table: ParamId,
}

impl TextEmbedding {
    pub fn new(store: &mut ParamStore, rng: &mut impl Rng, cfg: &ModelConfig) -> Self {
        let std = 1.0 / libm::sqrt(cfg.d_model as f64);
        let table = store.add("text_embedding.table", normal(rng, &[cfg.vocab_size, cfg.d_model], std), ParamGroup::TextEmbedding);
        Self { table }
    }
}

/// Row `i` of segment `s` is `table[id] · sqrt(d) + PE(i)`.
pub(crate) fn embed_tokens(g: &mut Graph, table: Var, seqs: &[&[u32]], d: usize) -> Result<(Var, Vec<Segment>)> {
    let vocab = g.shape(table)[0];
    let mut ids = Vec::with_capacity(seqs.iter().map(|s| s.len()).sum());
    for s in seqs {
        if s.is_empty() {
            return Err(Error::Empty("token sequence"));
        }
        for &id in *s {
            if id as usize >= vocab {
                return Err(Error::Vocabulary { id, size: vocab });
            }
            ids.push(id as usize);
        }
    }
    let segments = Segment::packed(&seqs.iter().map(|s| s.len()).collect::<Vec<_>>());
    let emb = g.embedding(table, &ids, libm::sqrt(d as f64))?;
    let pe = g.constant(packed_positions(&segments, d));
    Ok((g.add(emb, pe)?, segments))
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvLayer {
    pub kernel: ParamId,
    pub bias: ParamId,
    pub stride: usize,
    pub padding: usize,
}

impl ConvLayer {
    #[allow(clippy::too_many_arguments)]
    fn new(store: &mut ParamStore, rng: &mut impl Rng, name: &str, group: ParamGroup, c_in: usize, c_out: usize, stack: &ConvStackConfig) -> Self {
        let k = stack.kernel;
        let kernel = crate::nn::xavier(rng, &[c_out, c_in, k], c_in * k, c_out * k);
        Self {
            kernel: store.add(format!("{name}.kernel"), kernel, group),
            bias: store.add(format!("{name}.bias"), Tensor::zeros(&[c_out]), group),
            stride: stack.stride,
            padding: stack.padding,
        }
    }

    fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Result<Var> {
        let len = g.shape(x)[0];
        let k = g.shape(p.var(self.kernel))[2];
        if len + 2 * self.padding < k {
            return Err(Error::InputTooShort { len });
        }
        Ok(g.conv1d(x, p.var(self.kernel), Some(p.var(self.bias)), self.stride, self.padding)?)
    }
}

/// Frame encoder followed by the length-reducing CNN.
#[derive(Debug, Clone)]
pub(crate) struct SpeechEncoder {
    pub frontend: Vec<ConvLayer>,
    pub downsample: Vec<ConvLayer>,
}

impl SpeechEncoder {
    pub fn new(store: &mut ParamStore, rng: &mut impl Rng, cfg: &ModelConfig) -> Self {
        let mut c_in = cfg.speech_dim;
        let mut frontend = Vec::new();
        for i in 0..cfg.frontend.layers {
            let name = format!("speech.frontend.{i}");
            frontend.push(ConvLayer::new(store, rng, &name, ParamGroup::SpeechFrontend, c_in, cfg.frontend.channels, &cfg.frontend));
            c_in = cfg.frontend.channels;
        }
        let mut downsample = Vec::new();
        for i in 0..cfg.downsample.layers {
            let c_out = if i + 1 == cfg.downsample.layers { cfg.d_model } else { cfg.downsample.channels };
            let name = format!("speech.downsample.{i}");
            downsample.push(ConvLayer::new(store, rng, &name, ParamGroup::SpeechDownsample, c_in, c_out, &cfg.downsample));
            c_in = c_out;
        }
        Self { frontend, downsample }
    }

    /// Frame encoder on one utterance: `l_raw × f` → `l_feat × channels`.
    pub fn frontend(&self, g: &mut Graph, p: &Bound, frames: &FrameSequence) -> Result<Var> {
        let data = frames.data().iter().map(|&v| v as f64).collect();
        let mut x = g.constant(Tensor::new(alloc::vec![frames.len(), frames.dim()], data)?);
        for layer in &self.frontend {
            x = layer.forward(g, p, x)?;
            x = g.gelu(x)?;
        }
        Ok(x)
    }

    /// Length-reducing CNN on one utterance's features, ending at `d_model`.
    pub fn downsample(&self, g: &mut Graph, p: &Bound, mut x: Var) -> Result<Var> {
        let last = self.downsample.len() - 1;
        for (i, layer) in self.downsample.iter().enumerate() {
            x = layer.forward(g, p, x)?;
            if i != last {
                x = g.gelu(x)?;
            }
        }
        Ok(x)
    }
}

/// Post-norm self-attention block.
#[derive(Debug, Clone, Copy)]
pub(crate) struct EncoderLayer {
    pub attention: MultiHeadAttention,
    pub attention_norm: LayerNorm,
    pub ffn: FeedForward,
    pub ffn_norm: LayerNorm,
}

impl EncoderLayer {
    pub fn new(store: &mut ParamStore, rng: &mut impl Rng, name: &str, group: ParamGroup, cfg: &ModelConfig) -> Self {
        let d = cfg.d_model;
        Self {
            attention: MultiHeadAttention::new(store, rng, &format!("{name}.self_attention"), group, d, cfg.heads),
            attention_norm: LayerNorm::new(store, &format!("{name}.self_attention_norm"), group, d, cfg.layer_norm_eps),
            ffn: FeedForward::new(store, rng, &format!("{name}.ffn"), group, d, cfg.ffn_dim),
            ffn_norm: LayerNorm::new(store, &format!("{name}.ffn_norm"), group, d, cfg.layer_norm_eps),
        }
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var, segments: &[Segment]) -> Result<Var> {
        let a = self.attention.forward(g, p, x, x, segments, segments, false)?;
        let x = residual_norm(g, p, &self.attention_norm, x, a.output)?;
        let f = self.ffn.forward(g, p, x)?;
        residual_norm(g, p, &self.ffn_norm, x, f)
    }
}
