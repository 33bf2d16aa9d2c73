//! Finite-difference gradient suite over every differentiable operation.
//! Shared by the core gradient tests and the acceptance target.

#![allow(dead_code)]

use chimera_core::corpus::{FrameSequence, StTriplet, TokenSequence};
use chimera_core::model::{Chimera, ConvStackConfig, ModelConfig, Packed};
use chimera_core::objectives::{contrastive_loss_graph, mt_loss_graph, st_loss_graph, total_loss_graph, LossWeights};
use chimera_core::tensor::gradcheck::{check_gradients, relative_error, GradCheckReport};
use chimera_core::tensor::{Graph, Segment, Tensor, TensorError, Var};
use chimera_core::train::collect_grads;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const STEP: f64 = 1e-5;
pub const MAX_REL_ERR: f64 = 1e-4;

pub struct OpResult {
    pub name: &'static str,
    pub instances: usize,
    pub worst: GradCheckReport,
}

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.5..1.5)).collect()).unwrap()
}

/// Values bounded away from zero so kinked ops are differentiable at every sample.
fn rand_away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m = rng.gen_range(0.05..1.5);
            if rng.gen_bool(0.5) { m } else { -m }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

fn positive(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(0.2..2.0)).collect()).unwrap()
}

/// Projects an arbitrary output onto a fixed random direction so every
/// output element contributes to the scalar being differentiated.
fn project(g: &mut Graph, out: Var, weights: &Tensor) -> Result<Var, TensorError> {
    let shape = g.shape(out).to_vec();
    let w = g.constant(weights.clone().reshape(shape)?);
    let prod = g.mul(out, w)?;
    g.sum(prod)
}

fn run<F>(
    name: &'static str,
    instances: usize,
    seed: u64,
    mut make: impl FnMut(&mut ChaCha8Rng) -> Instance,
    f: F,
) -> OpResult
where
    F: Fn(&mut Graph, &[Var], &[f64]) -> Result<Var, TensorError>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = GradCheckReport { max_rel_err: 0.0, max_abs_err: 0.0, checked: 0 };
    for _ in 0..instances {
        let Instance { inputs, meta, out_numel } = make(&mut rng);
        let weights = rand_tensor(&mut rng, &[out_numel]);
        let report = check_gradients(&inputs, STEP, |g, vars| {
            let out = f(g, vars, &meta)?;
            if g.value(out).numel() == 1 && out_numel == 1 {
                let w = weights.data()[0];
                g.scale(out, w)
            } else {
                project(g, out, &weights)
            }
        })
        .unwrap_or_else(|e| panic!("{name}: {e}"));
        worst.max_rel_err = worst.max_rel_err.max(report.max_rel_err);
        worst.max_abs_err = worst.max_abs_err.max(report.max_abs_err);
        worst.checked += report.checked;
    }
    OpResult { name, instances, worst }
}

/// Differentiable inputs plus integer-valued configuration that must not be perturbed.
pub struct Instance {
    pub inputs: Vec<Tensor>,
    pub meta: Vec<f64>,
    pub out_numel: usize,
}

fn inst(inputs: Vec<Tensor>, out_numel: usize) -> Instance {
    Instance { inputs, meta: Vec::new(), out_numel }
}

fn dims(rng: &mut ChaCha8Rng, lo: usize, hi: usize) -> usize {
    rng.gen_range(lo..=hi)
}

/// Runs every op-level check with `instances` random instances each.
pub fn tensor_ops(instances: usize) -> Vec<OpResult> {
    let mut out = Vec::new();
    for (ta, tb) in [(false, false), (true, false), (false, true), (true, true)] {
        let name = match (ta, tb) {
            (false, false) => "matmul",
            (true, false) => "matmul_ta",
            (false, true) => "matmul_tb",
            (true, true) => "matmul_tab",
        };
        out.push(run(
            name,
            instances,
            11,
            |rng| {
                let (p, q, r) = (dims(rng, 1, 4), dims(rng, 1, 4), dims(rng, 1, 4));
                let sa = if ta { [q, p] } else { [p, q] };
                let sb = if tb { [r, q] } else { [q, r] };
                inst(vec![rand_tensor(rng, &sa), rand_tensor(rng, &sb)], p * r)
            },
            move |g, v, _| g.matmul_t(v[0], v[1], ta, tb),
        ));
    }
    let binary: [(&'static str, fn(&mut Graph, Var, Var) -> Result<Var, TensorError>); 3] =
        [("add", Graph::add), ("sub", Graph::sub), ("mul", Graph::mul)];
    for (name, op) in binary {
        out.push(run(
            name,
            instances,
            12,
            |rng| {
                let s = [dims(rng, 1, 4), dims(rng, 1, 4)];
                inst(vec![rand_tensor(rng, &s), rand_tensor(rng, &s)], s[0] * s[1])
            },
            move |g, v, _| op(g, v[0], v[1]),
        ));
    }
    out.push(run(
        "scale",
        instances,
        13,
        |rng| {
            let n = dims(rng, 1, 16);
            inst(vec![rand_tensor(rng, &[n])], n)
        },
        |g, v, _| g.scale(v[0], -1.7),
    ));
    out.push(run(
        "add_row_broadcast",
        instances,
        14,
        |rng| {
            let (r, c) = (dims(rng, 1, 5), dims(rng, 1, 5));
            inst(vec![rand_tensor(rng, &[r, c]), rand_tensor(rng, &[c])], r * c)
        },
        |g, v, _| g.add_row_broadcast(v[0], v[1]),
    ));
    out.push(run(
        "sum",
        instances,
        15,
        |rng| {
            let n = dims(rng, 1, 20);
            inst(vec![rand_tensor(rng, &[n])], 1)
        },
        |g, v, _| g.sum(v[0]),
    ));
    out.push(run(
        "mean",
        instances,
        16,
        |rng| {
            let n = dims(rng, 1, 20);
            inst(vec![rand_tensor(rng, &[n])], 1)
        },
        |g, v, _| g.mean(v[0]),
    ));
    let unary: [(&'static str, fn(&mut Graph, Var) -> Result<Var, TensorError>); 4] =
        [("relu", Graph::relu), ("gelu", Graph::gelu), ("exp", Graph::exp), ("transpose", Graph::transpose)];
    for (name, op) in unary {
        out.push(run(
            name,
            instances,
            17,
            |rng| {
                let s = [dims(rng, 1, 5), dims(rng, 1, 5)];
                inst(vec![rand_away_from_zero(rng, &s)], s[0] * s[1])
            },
            move |g, v, _| op(g, v[0]),
        ));
    }
    out.push(run(
        "ln",
        instances,
        18,
        |rng| {
            let n = dims(rng, 1, 16);
            inst(vec![positive(rng, &[n])], n)
        },
        |g, v, _| g.ln(v[0]),
    ));
    out.push(run(
        "softmax",
        instances,
        19,
        |rng| {
            let s = [dims(rng, 1, 4), dims(rng, 1, 6)];
            inst(vec![rand_tensor(rng, &s)], s[0] * s[1])
        },
        |g, v, _| g.softmax(v[0]),
    ));
    out.push(run(
        "log_softmax",
        instances,
        20,
        |rng| {
            let s = [dims(rng, 1, 4), dims(rng, 1, 6)];
            inst(vec![rand_tensor(rng, &s)], s[0] * s[1])
        },
        |g, v, _| g.log_softmax(v[0]),
    ));
    out.push(run(
        "layer_norm",
        instances,
        21,
        |rng| {
            let (r, d) = (dims(rng, 1, 4), dims(rng, 2, 6));
            inst(vec![rand_tensor(rng, &[r, d]), rand_tensor(rng, &[d]), rand_tensor(rng, &[d])], r * d)
        },
        |g, v, _| g.layer_norm(v[0], v[1], v[2], 1e-5),
    ));
    out.push(run(
        "conv1d",
        instances,
        22,
        |rng| {
            let (cin, cout, k) = (dims(rng, 1, 3), dims(rng, 1, 3), dims(rng, 1, 4));
            let (stride, pad) = (dims(rng, 1, 2), dims(rng, 0, 2));
            let len = dims(rng, k.saturating_sub(2 * pad).max(1), 7);
            let out_len = (len + 2 * pad - k) / stride + 1;
            Instance {
                inputs: vec![rand_tensor(rng, &[len, cin]), rand_tensor(rng, &[cout, cin, k]), rand_tensor(rng, &[cout])],
                meta: vec![stride as f64, pad as f64],
                out_numel: out_len * cout,
            }
        },
        |g, v, meta| {
            g.conv1d(v[0], v[1], Some(v[2]), meta[0].round() as usize, meta[1].round() as usize)
        },
    ));
    out.push(run(
        "embedding",
        instances,
        23,
        |rng| {
            let (vocab, d, n) = (dims(rng, 2, 6), dims(rng, 1, 4), dims(rng, 1, 6));
            let ids: Vec<f64> = (0..n).map(|_| rng.gen_range(0..vocab) as f64).collect();
            inst(vec![rand_tensor(rng, &[vocab, d]), Tensor::new(vec![n], ids).unwrap()], n * d)
        },
        |g, v, _| {
            let ids: Vec<usize> = g.value(v[1]).data().iter().map(|x| x.round() as usize).collect();
            g.embedding(v[0], &ids, 2.5)
        },
    ));
    for causal in [false, true] {
        out.push(run(
            if causal { "attention_causal" } else { "attention" },
            instances,
            24,
            move |rng| {
                let heads = dims(rng, 1, 2);
                let d = heads * dims(rng, 1, 2);
                let segs = dims(rng, 1, 2);
                let mut lq = 0;
                let mut lk = 0;
                let mut meta = vec![heads as f64];
                for _ in 0..segs {
                    let q = dims(rng, 1, 3);
                    let k = if causal { q } else { dims(rng, 1, 3) };
                    meta.push(q as f64);
                    meta.push(k as f64);
                    lq += q;
                    lk += k;
                }
                Instance {
                    inputs: vec![rand_tensor(rng, &[lq, d]), rand_tensor(rng, &[lk, d]), rand_tensor(rng, &[lk, d])],
                    meta,
                    out_numel: lq * d,
                }
            },
            move |g, v, meta| {
                let meta: Vec<usize> = meta.iter().map(|x| x.round() as usize).collect();
                let heads = meta[0];
                let qs: Vec<usize> = meta[1..].iter().step_by(2).copied().collect();
                let ks: Vec<usize> = meta[2..].iter().step_by(2).copied().collect();
                g.attention(v[0], v[1], v[2], heads, &Segment::packed(&qs), &Segment::packed(&ks), causal)
            },
        ));
    }
    out.push(run(
        "tile_rows",
        instances,
        25,
        |rng| {
            let (r, c) = (dims(rng, 1, 3), dims(rng, 1, 3));
            inst(vec![rand_tensor(rng, &[r, c])], r * c * 3)
        },
        |g, v, _| g.tile_rows(v[0], 3),
    ));
    out.push(run(
        "concat_rows",
        instances,
        26,
        |rng| {
            let c = dims(rng, 1, 4);
            let (r1, r2) = (dims(rng, 1, 3), dims(rng, 1, 3));
            inst(vec![rand_tensor(rng, &[r1, c]), rand_tensor(rng, &[r2, c])], (2 * r1 + r2) * c)
        },
        |g, v, _| g.concat_rows(&[v[0], v[1], v[0]]),
    ));
    out.push(run(
        "slice_rows",
        instances,
        27,
        |rng| {
            let (r, c) = (dims(rng, 2, 5), dims(rng, 1, 4));
            inst(vec![rand_tensor(rng, &[r, c])], (r - 1) * c)
        },
        |g, v, _| {
            let r = g.shape(v[0])[0];
            g.slice_rows(v[0], 1, r)
        },
    ));
    out.push(run(
        "reshape",
        instances,
        28,
        |rng| {
            let (r, c) = (dims(rng, 1, 4), dims(rng, 1, 4));
            inst(vec![rand_tensor(rng, &[r, c])], r * c)
        },
        |g, v, _| {
            let n = g.value(v[0]).numel();
            g.reshape(v[0], &[n])
        },
    ));
    out.push(run(
        "normalize_rows",
        instances,
        29,
        |rng| {
            let (r, c) = (dims(rng, 1, 4), dims(rng, 1, 5));
            inst(vec![rand_away_from_zero(rng, &[r, c])], r * c)
        },
        |g, v, _| g.normalize_rows(v[0], 1e-8),
    ));
    out.push(run(
        "cosine_similarity",
        instances,
        30,
        |rng| {
            let d = dims(rng, 1, 8);
            inst(vec![rand_away_from_zero(rng, &[d]), rand_away_from_zero(rng, &[d])], 1)
        },
        |g, v, _| g.cosine_similarity(v[0], v[1], 1e-8),
    ));
    out.push(run(
        "cross_entropy",
        instances,
        31,
        |rng| {
            let (t, vocab) = (dims(rng, 2, 5), dims(rng, 2, 6));
            let mut targets: Vec<f64> = (0..t).map(|_| rng.gen_range(0..vocab) as f64).collect();
            targets[0] = 1.0 % vocab as f64;
            let smoothing = if rng.gen_bool(0.5) { 0.1 } else { 0.0 };
            let mut meta = vec![smoothing];
            meta.extend(targets);
            Instance { inputs: vec![rand_tensor(rng, &[t, vocab])], meta, out_numel: 1 }
        },
        |g, v, meta| {
            let targets: Vec<usize> = meta[1..].iter().map(|x| x.round() as usize).collect();
            // id 0 acts as padding whenever it appears
            let pad = if targets.iter().all(|&t| t == 0) { None } else { Some(0) };
            g.cross_entropy(v[0], &targets, pad, meta[0])
        },
    ));
    out.push(run(
        "contrastive_loss",
        instances,
        32,
        |rng| {
            let (m, d, pairs) = (dims(rng, 2, 3), dims(rng, 2, 4), dims(rng, 1, 2));
            Instance {
                inputs: vec![rand_away_from_zero(rng, &[m * pairs, d]), rand_away_from_zero(rng, &[m * pairs, d])],
                meta: vec![m as f64, pairs as f64, rng.gen_range(0.5..2.0)],
                out_numel: 1,
            }
        },
        |g, v, meta| {
            let (m, pairs) = (meta[0].round() as usize, meta[1].round() as usize);
            let segments = Segment::packed(&vec![m; pairs]);
            let text = Packed { var: v[0], segments: segments.clone() };
            let speech = Packed { var: v[1], segments };
            contrastive_loss_graph(g, &text, &speech, meta[2]).map_err(|e| match e {
                chimera_core::Error::Tensor(t) => t,
                other => panic!("{other}"),
            })
        },
    ));
    out
}

fn tiny_model_config() -> ModelConfig {
    ModelConfig {
        vocab_size: 9,
        d_model: 8,
        heads: 2,
        ffn_dim: 10,
        encoder_layers: 1,
        projection_layers: 2,
        decoder_layers: 1,
        memory_len: 3,
        speech_dim: 3,
        frontend: ConvStackConfig { layers: 1, kernel: 3, stride: 1, padding: 1, channels: 5 },
        downsample: ConvStackConfig { layers: 2, kernel: 3, stride: 2, padding: 1, channels: 5 },
        max_positions: 64,
        tie_output: true,
        layer_norm_eps: 1e-5,
    }
}

/// Full multitask loss of a small model: analytic parameter gradients
/// against central differences on `per_param` coordinates of every parameter.
pub fn model_loss(per_param: usize) -> OpResult {
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    let mut model = Chimera::new(tiny_model_config(), 5).unwrap();
    let triplets: Vec<StTriplet> = (0..2)
        .map(|i| {
            let len = 6 + i;
            StTriplet {
                speech: FrameSequence::new(len, 3, (0..len * 3).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap(),
                transcript: TokenSequence::new((0..3 + i).map(|_| rng.gen_range(4..9)).collect()).unwrap(),
                translation: TokenSequence::new((0..2 + i).map(|_| rng.gen_range(4..9)).collect()).unwrap(),
            }
        })
        .collect();
    let loss = |model: &Chimera, grads: bool| {
        let mut s = model.session(|_| false, true);
        let refs: Vec<&StTriplet> = triplets.iter().collect();
        let (st, _, speech) = st_loss_graph(&mut s, &refs, 0.1).unwrap();
        let pairs: Vec<_> = triplets.iter().map(|t| (&t.transcript, &t.translation)).collect();
        let (mt, _) = mt_loss_graph(&mut s, &pairs, 0.1).unwrap();
        let sources: Vec<_> = triplets.iter().map(|t| chimera_core::model::Source::Text(&t.transcript)).collect();
        let h = s.encode(&sources).unwrap();
        let text = s.project(&h).unwrap().memory;
        let ctr = contrastive_loss_graph(&mut s.graph, &text, &speech, 1.0).unwrap();
        let w = LossWeights { st: 1.0, mt: 0.5, ctr: 0.25 };
        let total = total_loss_graph(&mut s.graph, &w, Some(st), Some(mt), Some(ctr)).unwrap();
        let value = s.graph.item(total).unwrap();
        let g = if grads {
            s.graph.backward(total).unwrap();
            collect_grads(&s)
        } else {
            Vec::new()
        };
        (value, g)
    };
    let (_, grads) = loss(&model, true);
    let mut worst = GradCheckReport { max_rel_err: 0.0, max_abs_err: 0.0, checked: 0 };
    let mut tensors = 0;
    for (id, grad) in grads {
        tensors += 1;
        for _ in 0..per_param {
            let j = rng.gen_range(0..grad.numel());
            let orig = model.params().get(id).data()[j];
            model.params_mut().get_mut(id).data_mut()[j] = orig + STEP;
            let up = loss(&model, false).0;
            model.params_mut().get_mut(id).data_mut()[j] = orig - STEP;
            let down = loss(&model, false).0;
            model.params_mut().get_mut(id).data_mut()[j] = orig;
            let numeric = (up - down) / (2.0 * STEP);
            let a = grad.data()[j];
            worst.max_rel_err = worst.max_rel_err.max(relative_error(a, numeric));
            worst.max_abs_err = worst.max_abs_err.max((a - numeric).abs());
            worst.checked += 1;
        }
    }
    assert_eq!(tensors, model.params().len(), "every parameter should receive a gradient");
    OpResult { name: "chimera_total_loss", instances: per_param, worst }
}
