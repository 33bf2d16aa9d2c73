use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use super::ops::Segment;
use super::{Tensor, TensorError};

/// Handle to a value recorded on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Where each (segment, head) block of saved attention probabilities lives.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionLayout {
    pub heads: usize,
    pub query_segments: Vec<Segment>,
    pub key_segments: Vec<Segment>,
    /// Offset of segment `s`'s first head block in the flat probability buffer.
    pub offsets: Vec<usize>,
}

impl AttentionLayout {
    /// Probabilities for `segment` and `head`, row-major `q_len × k_len`.
    pub fn block<'a>(&self, probs: &'a [f64], segment: usize, head: usize) -> &'a [f64] {
        let q = self.query_segments[segment].len;
        let k = self.key_segments[segment].len;
        let start = self.offsets[segment] + head * q * k;
        &probs[start..start + q * k]
    }
}

/// Operation that produced a node, with whatever the backward pass needs.
#[derive(Debug, Clone)]
pub(crate) enum Op {
    Leaf,
    MatMul { a: Var, b: Var, ta: bool, tb: bool },
    Add { a: Var, b: Var },
    Sub { a: Var, b: Var },
    Mul { a: Var, b: Var },
    Scale { a: Var, factor: f64 },
    AddRowBroadcast { x: Var, bias: Var },
    Sum { a: Var },
    Relu { a: Var },
    Gelu { a: Var },
    Exp { a: Var },
    Ln { a: Var },
    Softmax { a: Var },
    LogSoftmax { a: Var },
    LayerNorm { x: Var, gain: Var, bias: Var, xhat: Vec<f64>, inv_std: Vec<f64> },
    Conv1d { x: Var, kernels: Var, bias: Option<Var>, stride: usize, padding: usize, cols: Vec<f64> },
    Embedding { table: Var, ids: Vec<usize>, scale: f64 },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        layout: AttentionLayout,
        probs: Vec<f64>,
    },
    TileRows { a: Var, times: usize },
    ConcatRows { parts: Vec<Var> },
    SliceRows { a: Var, start: usize },
    Transpose { a: Var },
    Reshape { a: Var },
    NormalizeRows { a: Var, norms: Vec<f64>, eps: f64 },
    CrossEntropy { logits: Var, targets: Vec<usize>, weights: Vec<f64>, smoothing: f64, probs: Vec<f64> },
}

#[derive(Debug, Clone)]
pub(crate) struct Node {
    pub value: Arc<Tensor>,
    pub requires_grad: bool,
    pub op: Op,
}

/// Eagerly built computation tape. Nodes are appended in topological order,
/// so the reverse pass is a single backwards sweep over the node list.
#[derive(Debug, Clone)]
pub struct Graph {
    pub(crate) nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
    check_finite: bool,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    /// A new tape with NaN/Inf checks enabled.
    pub fn new() -> Self {
        Self { nodes: Vec::new(), grads: Vec::new(), check_finite: true }
    }

    /// Toggles NaN/Inf detection at op boundaries.
    pub fn with_finite_checks(mut self, enabled: bool) -> Self {
        self.check_finite = enabled;
        self
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records a trainable leaf.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.leaf_shared(Arc::new(value), true)
    }

    /// Records a leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf_shared(Arc::new(value), false)
    }

    /// Records a leaf backed by shared storage (no copy).
    pub fn leaf_shared(&mut self, value: Arc<Tensor>, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, requires_grad, op: Op::Leaf });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Scalar value of a one-element node.
    pub fn item(&self, v: Var) -> Option<f64> {
        self.value(v).item()
    }

    /// Saved attention probabilities of an attention node.
    pub fn attention_probs(&self, v: Var) -> Option<(&AttentionLayout, &[f64])> {
        match &self.nodes[v.0].op {
            Op::Attention { layout, probs, .. } => Some((layout, probs)),
            _ => None,
        }
    }

    pub(crate) fn push(&mut self, value: Tensor, op: Op, op_name: &'static str) -> Result<Var, TensorError> {
        if self.check_finite && !value.is_finite() {
            return Err(TensorError::NonFinite { op: op_name });
        }
        let requires_grad = op_inputs(&op).iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node { value: Arc::new(value), requires_grad, op });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Reverse sweep from a scalar root. Gradients of every node that
    /// requires one become available through [`Graph::grad`].
    pub fn backward(&mut self, root: Var) -> Result<(), TensorError> {
        let shape = self.shape(root).to_vec();
        if self.value(root).numel() != 1 {
            return Err(TensorError::NonScalarRoot { shape });
        }
        self.grads = vec![None; self.nodes.len()];
        if !self.nodes[root.0].requires_grad {
            return Ok(());
        }
        self.grads[root.0] = Some(vec![1.0]);
        for idx in (0..=root.0).rev() {
            let Some(upstream) = self.grads[idx].take() else { continue };
            if !self.nodes[idx].requires_grad {
                continue;
            }
            if !matches!(self.nodes[idx].op, Op::Leaf) {
                super::backward::propagate(self, idx, &upstream);
            }
            self.grads[idx] = Some(upstream);
        }
        if self.check_finite {
            for g in self.grads.iter().flatten() {
                if g.iter().any(|v| !v.is_finite()) {
                    return Err(TensorError::NonFinite { op: "backward" });
                }
            }
        }
        Ok(())
    }

    /// Gradient accumulated for `v` by the last backward pass.
    pub fn grad(&self, v: Var) -> Option<Tensor> {
        let g = self.grads.get(v.0)?.as_ref()?;
        Some(Tensor::from_parts(self.shape(v).to_vec(), g.clone()))
    }

    /// Accumulates into the gradient buffer of `v` if it takes part in the pass.
    pub(crate) fn accumulate(&mut self, v: Var, f: impl FnOnce(&mut [f64])) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        let len = self.nodes[v.0].value.numel();
        let slot = self.grads[v.0].get_or_insert_with(|| vec![0.0; len]);
        f(slot);
    }

    pub(crate) fn wants_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }
}

pub(crate) fn op_inputs(op: &Op) -> Vec<Var> {
    match op {
        Op::Leaf => Vec::new(),
        Op::MatMul { a, b, .. } | Op::Add { a, b } | Op::Sub { a, b } | Op::Mul { a, b } => vec![*a, *b],
        Op::AddRowBroadcast { x, bias } => vec![*x, *bias],
        Op::Scale { a, .. }
        | Op::Sum { a }
        | Op::Relu { a }
        | Op::Gelu { a }
        | Op::Exp { a }
        | Op::Ln { a }
        | Op::Softmax { a }
        | Op::LogSoftmax { a }
        | Op::TileRows { a, .. }
        | Op::SliceRows { a, .. }
        | Op::Transpose { a }
        | Op::Reshape { a }
        | Op::NormalizeRows { a, .. } => vec![*a],
        Op::LayerNorm { x, gain, bias, .. } => vec![*x, *gain, *bias],
        Op::Conv1d { x, kernels, bias, .. } => {
            let mut v = vec![*x, *kernels];
            v.extend(bias.iter().copied());
            v
        }
        Op::Embedding { table, .. } => vec![*table],
        Op::Attention { q, k, v, .. } => vec![*q, *k, *v],
        Op::ConcatRows { parts } => parts.clone(),
        Op::CrossEntropy { logits, .. } => vec![*logits],
    }
}
