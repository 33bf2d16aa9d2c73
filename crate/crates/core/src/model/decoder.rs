use alloc::format;
use alloc::vec::Vec;

use rand::Rng;

use super::config::ModelConfig;
use super::encoders::embed_tokens;
use crate::error::{Error, Result};
use crate::nn::{normal, residual_norm, Bound, FeedForward, LayerNorm, Linear, MultiHeadAttention, ParamGroup, ParamId, ParamStore};
use crate::tensor::{Graph, Segment, Tensor, Var};

/// Causal self-attention, cross-attention to the memory, feed-forward;
/// each sublayer post-norm.
#[derive(Debug, Clone, Copy)]
pub(crate) struct DecoderLayer {
    pub self_attention: MultiHeadAttention,
    pub self_attention_norm: LayerNorm,
    pub cross_attention: MultiHeadAttention,
    pub cross_attention_norm: LayerNorm,
    pub ffn: FeedForward,
    pub ffn_norm: LayerNorm,
}

impl DecoderLayer {
    fn new(store: &mut ParamStore, rng: &mut impl Rng, name: &str, cfg: &ModelConfig) -> Self {
        let (d, h, eps, group) = (cfg.d_model, cfg.heads, cfg.layer_norm_eps, ParamGroup::Decoder);
        Self {
            self_attention: MultiHeadAttention::new(store, rng, &format!("{name}.self_attention"), group, d, h),
            self_attention_norm: LayerNorm::new(store, &format!("{name}.self_attention_norm"), group, d, eps),
            cross_attention: MultiHeadAttention::new(store, rng, &format!("{name}.cross_attention"), group, d, h),
            cross_attention_norm: LayerNorm::new(store, &format!("{name}.cross_attention_norm"), group, d, eps),
            ffn: FeedForward::new(store, rng, &format!("{name}.ffn"), group, d, cfg.ffn_dim),
            ffn_norm: LayerNorm::new(store, &format!("{name}.ffn_norm"), group, d, eps),
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn forward(
        &self,
        g: &mut Graph,
        p: &Bound,
        x: Var,
        segments: &[Segment],
        memory: Var,
        memory_segments: &[Segment],
    ) -> Result<Var> {
        let a = self.self_attention.forward(g, p, x, x, segments, segments, true)?;
        let x = residual_norm(g, p, &self.self_attention_norm, x, a.output)?;
        let c = self.cross_attention.forward(g, p, x, memory, segments, memory_segments, false)?;
        let x = residual_norm(g, p, &self.cross_attention_norm, x, c.output)?;
        let f = self.ffn.forward(g, p, x)?;
        residual_norm(g, p, &self.ffn_norm, x, f)
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) enum OutputLayer {
    /// Logits are `h · Eᵀ + b` with the decoder embedding table `E`.
    Tied { bias: ParamId },
    Untied(Linear),
}

#[derive(Debug, Clone)]
pub(crate) struct Decoder {
    pub embedding: ParamId,
    pub layers: Vec<DecoderLayer>,
    pub output: OutputLayer,
}

impl Decoder {
    pub fn new(store: &mut ParamStore, rng: &mut impl Rng, cfg: &ModelConfig) -> Self {
        let std = 1.0 / libm::sqrt(cfg.d_model as f64);
        let embedding = store.add("decoder.embedding", normal(rng, &[cfg.vocab_size, cfg.d_model], std), ParamGroup::Decoder);
        let layers = (0..cfg.decoder_layers)
            .map(|i| DecoderLayer::new(store, rng, &format!("decoder.{i}"), cfg))
            .collect();
        let output = if cfg.tie_output {
            OutputLayer::Tied { bias: store.add("decoder.output.bias", Tensor::zeros(&[cfg.vocab_size]), ParamGroup::Decoder) }
        } else {
            OutputLayer::Untied(Linear::new(store, rng, "decoder.output", ParamGroup::Decoder, cfg.d_model, cfg.vocab_size))
        };
        Self { embedding, layers, output }
    }

    /// Teacher-forced logits for every prefix position of every input.
    /// Input `s` attends to memory segment `s`.
    #[allow(clippy::too_many_arguments)]
    pub fn forward(
        &self,
        g: &mut Graph,
        p: &Bound,
        cfg: &ModelConfig,
        memory: Var,
        memory_segments: &[Segment],
        inputs: &[&[u32]],
    ) -> Result<(Var, Vec<Segment>)> {
        if inputs.len() != memory_segments.len() {
            return Err(Error::Mismatch(format!(
                "{} decoder inputs for {} memories",
                inputs.len(),
                memory_segments.len()
            )));
        }
        if let Some(s) = inputs.iter().find(|s| s.len() > cfg.max_positions) {
            return Err(Error::Length { len: s.len(), max: cfg.max_positions });
        }
        let (mut x, segments) = embed_tokens(g, p.var(self.embedding), inputs, cfg.d_model)?;
        for layer in &self.layers {
            x = layer.forward(g, p, x, &segments, memory, memory_segments)?;
        }
        let logits = match self.output {
            OutputLayer::Tied { bias } => {
                let l = g.matmul_t(x, p.var(self.embedding), false, true)?;
                g.add_row_broadcast(l, p.var(bias))?
            }
            OutputLayer::Untied(linear) => linear.forward(g, p, x)?,
        };
        Ok((logits, segments))
    }
}
