//! Named parameter storage and the Transformer building blocks shared by
//! the encoder, the semantic projection and the decoder.

use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Graph, Segment, Tensor, Var};

/// Module a parameter belongs to; freezing and path checks operate on groups.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ParamGroup {
    TextEmbedding,
    SpeechFrontend,
    SpeechDownsample,
    SharedEncoder,
    Projection,
    Decoder,
}

impl ParamGroup {
    pub fn is_speech(self) -> bool {
        matches!(self, ParamGroup::SpeechFrontend | ParamGroup::SpeechDownsample)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
pub struct Param {
    pub name: String,
    pub group: ParamGroup,
    value: Arc<Tensor>,
}

impl Param {
    pub fn value(&self) -> &Tensor {
        &self.value
    }
}

/// Ordered, name-indexed parameter set. Insertion order is the canonical order.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    params: Vec<Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor, group: ParamGroup) -> ParamId {
        let name = name.into();
        debug_assert!(self.find(&name).is_none(), "duplicate parameter {name}");
        self.params.push(Param { name, group, value: Arc::new(value) });
        ParamId(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    /// Mutable access; copies the storage first if a graph still shares it.
    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        Arc::make_mut(&mut self.params[id.0].value)
    }

    pub fn param(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        (0..self.params.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    /// Replaces every value from `(name, tensor)` pairs; names and shapes
    /// must match this store exactly.
    pub fn load<'a>(&mut self, values: impl IntoIterator<Item = (&'a str, &'a Tensor)>) -> Result<()> {
        let mut seen = vec![false; self.params.len()];
        for (name, t) in values {
            let id = self
                .find(name)
                .ok_or_else(|| Error::Mismatch(alloc::format!("unknown parameter {name}")))?;
            if self.get(id).shape() != t.shape() {
                return Err(Error::Mismatch(alloc::format!(
                    "parameter {name}: expected shape {:?}, found {:?}",
                    self.get(id).shape(),
                    t.shape()
                )));
            }
            self.params[id.0].value = Arc::new(t.clone());
            seen[id.0] = true;
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(Error::Mismatch(alloc::format!("missing parameter {}", self.params[missing].name)));
        }
        Ok(())
    }

    /// Records every parameter as a graph leaf. Parameters in groups for
    /// which `frozen` returns true become constants.
    pub fn bind(&self, g: &mut Graph, frozen: impl Fn(ParamGroup) -> bool) -> Bound {
        let vars = self
            .params
            .iter()
            .map(|p| g.leaf_shared(p.value.clone(), !frozen(p.group)))
            .collect();
        Bound { vars }
    }
}

/// Graph handles for every parameter of a [`ParamStore`], indexed by [`ParamId`].
#[derive(Debug, Clone)]
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

/// Xavier-uniform initialization for a `fan_in × fan_out` matrix.
pub fn xavier(rng: &mut impl Rng, shape: &[usize], fan_in: usize, fan_out: usize) -> Tensor {
    let a = libm::sqrt(6.0 / (fan_in + fan_out) as f64);
    let n = shape.iter().product();
    Tensor::from_parts(shape.to_vec(), (0..n).map(|_| rng.gen_range(-a..a)).collect())
}

pub fn normal(rng: &mut impl Rng, shape: &[usize], std: f64) -> Tensor {
    use rand_distr::{Distribution, Normal};
    let dist = Normal::new(0.0, std).expect("positive std");
    let n = shape.iter().product();
    Tensor::from_parts(shape.to_vec(), (0..n).map(|_| dist.sample(rng)).collect())
}

/// Sinusoidal position table: `PE(p, 2i) = sin(p / 10000^(2i/d))`,
/// `PE(p, 2i+1) = cos(p / 10000^(2i/d))`.
pub fn sinusoidal_positions(len: usize, d: usize) -> Tensor {
    let mut data = vec![0.0; len * d];
    for pos in 0..len {
        for i in (0..d).step_by(2) {
            let rate = libm::pow(10000.0, i as f64 / d as f64);
            let angle = pos as f64 / rate;
            data[pos * d + i] = libm::sin(angle);
            if i + 1 < d {
                data[pos * d + i + 1] = libm::cos(angle);
            }
        }
    }
    Tensor::from_parts(vec![len, d], data)
}

/// Position table for packed segments, restarting at 0 for each segment.
pub fn packed_positions(segments: &[Segment], d: usize) -> Tensor {
    let longest = segments.iter().map(|s| s.len).max().unwrap_or(0);
    let table = sinusoidal_positions(longest, d);
    let total: usize = segments.iter().map(|s| s.len).sum();
    let mut data = Vec::with_capacity(total * d);
    for s in segments {
        data.extend_from_slice(&table.data()[..s.len * d]);
    }
    Tensor::from_parts(vec![total, d], data)
}

/// `x · W + b` with `W` stored `in × out`.
#[derive(Debug, Clone, Copy)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    pub fn new(store: &mut ParamStore, rng: &mut impl Rng, name: &str, group: ParamGroup, fan_in: usize, fan_out: usize) -> Self {
        let weight = store.add(
            alloc::format!("{name}.weight"),
            xavier(rng, &[fan_in, fan_out], fan_in, fan_out),
            group,
        );
        let bias = store.add(alloc::format!("{name}.bias"), Tensor::zeros(&[fan_out]), group);
        Self { weight, bias }
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Result<Var> {
        let y = g.matmul(x, p.var(self.weight))?;
        Ok(g.add_row_broadcast(y, p.var(self.bias))?)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
    pub eps: f64,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, group: ParamGroup, d: usize, eps: f64) -> Self {
        let gain = store.add(alloc::format!("{name}.gain"), Tensor::from_parts(vec![d], vec![1.0; d]), group);
        let bias = store.add(alloc::format!("{name}.bias"), Tensor::zeros(&[d]), group);
        Self { gain, bias, eps }
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Result<Var> {
        Ok(g.layer_norm(x, p.var(self.gain), p.var(self.bias), self.eps)?)
    }
}

/// Multi-head attention with separate query/key/value/output projections.
#[derive(Debug, Clone, Copy)]
pub struct MultiHeadAttention {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
    pub heads: usize,
}

/// Output of an attention sublayer plus the node holding its probabilities.
#[derive(Debug, Clone, Copy)]
pub struct AttentionOutput {
    pub output: Var,
    pub weights: Var,
}

impl MultiHeadAttention {
    pub fn new(store: &mut ParamStore, rng: &mut impl Rng, name: &str, group: ParamGroup, d: usize, heads: usize) -> Self {
        Self {
            query: Linear::new(store, rng, &alloc::format!("{name}.query"), group, d, d),
            key: Linear::new(store, rng, &alloc::format!("{name}.key"), group, d, d),
            value: Linear::new(store, rng, &alloc::format!("{name}.value"), group, d, d),
            output: Linear::new(store, rng, &alloc::format!("{name}.output"), group, d, d),
            heads,
        }
    }

    #[allow(clippy::too_many_arguments)]
    pub fn forward(
        &self,
        g: &mut Graph,
        p: &Bound,
        queries: Var,
        context: Var,
        query_segments: &[Segment],
        key_segments: &[Segment],
        causal: bool,
    ) -> Result<AttentionOutput> {
        let q = self.query.forward(g, p, queries)?;
        let k = self.key.forward(g, p, context)?;
        let v = self.value.forward(g, p, context)?;
        let weights = g.attention(q, k, v, self.heads, query_segments, key_segments, causal)?;
        let output = self.output.forward(g, p, weights)?;
        Ok(AttentionOutput { output, weights })
    }
}

/// Position-wise `Linear → ReLU → Linear`.
#[derive(Debug, Clone, Copy)]
pub struct FeedForward {
    pub inner: Linear,
    pub outer: Linear,
}

impl FeedForward {
    pub fn new(store: &mut ParamStore, rng: &mut impl Rng, name: &str, group: ParamGroup, d: usize, hidden: usize) -> Self {
        Self {
            inner: Linear::new(store, rng, &alloc::format!("{name}.inner"), group, d, hidden),
            outer: Linear::new(store, rng, &alloc::format!("{name}.outer"), group, hidden, d),
        }
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Result<Var> {
        let h = self.inner.forward(g, p, x)?;
        let h = g.relu(h)?;
        self.outer.forward(g, p, h)
    }
}

/// Post-norm residual: `LN(x + f(x))`.
pub fn residual_norm(g: &mut Graph, p: &Bound, norm: &LayerNorm, x: Var, fx: Var) -> Result<Var> {
    let s = g.add(x, fx)?;
    norm.forward(g, p, s)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn positional_encoding_at_origin() {
        let pe = sinusoidal_positions(3, 6);
        assert_eq!(pe.row(0), &[0.0, 1.0, 0.0, 1.0, 0.0, 1.0]);
        // dims 0/1 at position 1 use rate 1
        assert!((pe.get(1, 0) - 1f64.sin()).abs() < 1e-15);
        assert!((pe.get(1, 1) - 1f64.cos()).abs() < 1e-15);
    }

    #[test]
    fn packed_positions_restart_per_segment() {
        let segs = Segment::packed(&[2, 3]);
        let pe = packed_positions(&segs, 4);
        assert_eq!(pe.row(0), pe.row(2));
        assert_eq!(pe.row(1), pe.row(3));
    }

    #[test]
    fn load_rejects_mismatched_sets() {
        let mut s = ParamStore::new();
        s.add("a", Tensor::zeros(&[2]), ParamGroup::Decoder);
        s.add("b", Tensor::zeros(&[3]), ParamGroup::Decoder);
        let a = Tensor::zeros(&[2]);
        let wrong = Tensor::zeros(&[4]);
        assert!(s.clone().load([("a", &a)]).is_err());
        assert!(s.clone().load([("a", &a), ("b", &wrong)]).is_err());
        assert!(s.clone().load([("a", &a), ("c", &a)]).is_err());
        let b = Tensor::from_parts(vec![3], vec![1.0, 2.0, 3.0]);
        s.load([("a", &a), ("b", &b)]).unwrap();
        assert_eq!(s.get(ParamId(1)).data(), &[1.0, 2.0, 3.0]);
    }
}
