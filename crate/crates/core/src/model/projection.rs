//! Shared semantic projection: `m` trainable queries repeatedly
//! cross-attend to the contextual features; the last layer's output is the
//! semantic memory.

use alloc::format;
use alloc::vec::Vec;

use rand::Rng;

use super::config::ModelConfig;
use crate::error::Result;
use crate::nn::{normal, residual_norm, Bound, FeedForward, LayerNorm, MultiHeadAttention, ParamGroup, ParamId, ParamStore};
use crate::tensor::{Graph, Segment, Var};

/// Cross-attention from memory rows to `Ĥ` with its own key/value
/// projections, then a feed-forward sublayer; both post-norm.
#[derive(Debug, Clone, Copy)]
pub(crate) struct ProjectionLayer {
    pub attention: MultiHeadAttention,
    pub attention_norm: LayerNorm,
    pub ffn: FeedForward,
    pub ffn_norm: LayerNorm,
}

/// Output of one projection layer.
#[derive(Debug, Clone, Copy)]
pub(crate) struct LayerOutput {
    pub output: Var,
    /// Attention node; its saved probabilities are `m × l` per segment and head.
    pub attention: Var,
}

impl ProjectionLayer {
    fn new(store: &mut ParamStore, rng: &mut impl Rng, name: &str, cfg: &ModelConfig) -> Self {
        let (d, group) = (cfg.d_model, ParamGroup::Projection);
        Self {
            attention: MultiHeadAttention::new(store, rng, &format!("{name}.cross_attention"), group, d, cfg.heads),
            attention_norm: LayerNorm::new(store, &format!("{name}.cross_attention_norm"), group, d, cfg.layer_norm_eps),
            ffn: FeedForward::new(store, rng, &format!("{name}.ffn"), group, d, cfg.ffn_dim),
            ffn_norm: LayerNorm::new(store, &format!("{name}.ffn_norm"), group, d, cfg.layer_norm_eps),
        }
    }

    pub fn forward(
        &self,
        g: &mut Graph,
        p: &Bound,
        queries: Var,
        query_segments: &[Segment],
        context: Var,
        context_segments: &[Segment],
    ) -> Result<LayerOutput> {
        let a = self.attention.forward(g, p, queries, context, query_segments, context_segments, false)?;
        let x = residual_norm(g, p, &self.attention_norm, queries, a.output)?;
        let f = self.ffn.forward(g, p, x)?;
        let output = residual_norm(g, p, &self.ffn_norm, x, f)?;
        Ok(LayerOutput { output, attention: a.weights })
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Projection {
    /// `M₀`, `m × d`.
    pub queries: ParamId,
    pub layers: Vec<ProjectionLayer>,
}

impl Projection {
    pub fn new(store: &mut ParamStore, rng: &mut impl Rng, cfg: &ModelConfig) -> Self {
        let queries = store.add("projection.queries", normal(rng, &[cfg.memory_len, cfg.d_model], 1.0), ParamGroup::Projection);
        let layers = (0..cfg.projection_layers)
            .map(|i| ProjectionLayer::new(store, rng, &format!("projection.{i}"), cfg))
            .collect();
        Self { queries, layers }
    }

    /// Runs every layer starting from `M₀` tiled once per context segment.
    /// Returns the memory (`segments.len()·m × d`), its segments, and the
    /// last layer's attention node.
    pub fn forward(&self, g: &mut Graph, p: &Bound, context: Var, segments: &[Segment]) -> Result<(Var, Vec<Segment>, Var)> {
        let m = g.shape(p.var(self.queries))[0];
        let memory_segments = Segment::packed(&alloc::vec![m; segments.len()]);
        let mut x = g.tile_rows(p.var(self.queries), segments.len())?;
        let mut attention = None;
        for layer in &self.layers {
            let out = layer.forward(g, p, x, &memory_segments, context, segments)?;
            x = out.output;
            attention = Some(out.attention);
        }
        Ok((x, memory_segments, attention.expect("at least one projection layer")))
    }
}
