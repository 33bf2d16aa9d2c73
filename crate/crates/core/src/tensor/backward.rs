//! Vector-Jacobian products for every [`Op`].

use alloc::vec;
use alloc::vec::Vec;

use super::graph::{Graph, Op};
use super::kernels::{self, MatRef};

/// Pushes the upstream gradient `dy` of node `idx` onto its inputs.
pub(crate) fn propagate(g: &mut Graph, idx: usize, dy: &[f64]) {
    // Saved activations are borrowed from the detached op and restored below.
    let op = core::mem::replace(&mut g.nodes[idx].op, Op::Leaf);
    let out = g.nodes[idx].value.clone();
    match &op {
        Op::Leaf => {}
        Op::MatMul { a, b, ta, tb } => {
            let (va, vb) = (g.nodes[a.0].value.clone(), g.nodes[b.0].value.clone());
            let (sa, sb) = (va.shape(), vb.shape());
            let mut am = MatRef::new(va.data(), sa[0], sa[1]);
            let mut bm = MatRef::new(vb.data(), sb[0], sb[1]);
            if *ta {
                am = am.t();
            }
            if *tb {
                bm = bm.t();
            }
            let (m, _) = am.dims();
            let (_, n) = bm.dims();
            let dc = MatRef::new(dy, m, n);
            // C = A'B' with A' = op(A): dA' = dC·B'ᵀ, dB' = A'ᵀ·dC.
            g.accumulate(*a, |ga| {
                if *ta {
                    // dA = (dC·B'ᵀ)ᵀ = B'·dCᵀ
                    kernels::gemm(bm, dc.t(), ga, 1.0, 1.0);
                } else {
                    kernels::gemm(dc, bm.t(), ga, 1.0, 1.0);
                }
            });
            g.accumulate(*b, |gb| {
                if *tb {
                    // dB = (A'ᵀ·dC)ᵀ = dCᵀ·A'
                    kernels::gemm(dc.t(), am, gb, 1.0, 1.0);
                } else {
                    kernels::gemm(am.t(), dc, gb, 1.0, 1.0);
                }
            });
        }
        Op::Add { a, b } => {
            g.accumulate(*a, |ga| add_into(ga, dy));
            g.accumulate(*b, |gb| add_into(gb, dy));
        }
        Op::Sub { a, b } => {
            g.accumulate(*a, |ga| add_into(ga, dy));
            g.accumulate(*b, |gb| gb.iter_mut().zip(dy).for_each(|(x, d)| *x -= d));
        }
        Op::Mul { a, b } => {
            let (va, vb) = (g.nodes[a.0].value.clone(), g.nodes[b.0].value.clone());
            g.accumulate(*a, |ga| {
                for ((x, d), o) in ga.iter_mut().zip(dy).zip(vb.data()) {
                    *x += d * o;
                }
            });
            g.accumulate(*b, |gb| {
                for ((x, d), o) in gb.iter_mut().zip(dy).zip(va.data()) {
                    *x += d * o;
                }
            });
        }
        Op::Scale { a, factor } => {
            g.accumulate(*a, |ga| ga.iter_mut().zip(dy).for_each(|(x, d)| *x += d * factor));
        }
        Op::AddRowBroadcast { x, bias } => {
            g.accumulate(*x, |gx| add_into(gx, dy));
            let cols = g.nodes[bias.0].value.numel();
            g.accumulate(*bias, |gb| {
                for row in dy.chunks(cols.max(1)) {
                    add_into(gb, row);
                }
            });
        }
        Op::Sum { a } => {
            let d = dy[0];
            g.accumulate(*a, |ga| ga.iter_mut().for_each(|x| *x += d));
        }
        Op::Relu { a } => {
            let va = g.nodes[a.0].value.clone();
            g.accumulate(*a, |ga| {
                for ((x, d), v) in ga.iter_mut().zip(dy).zip(va.data()) {
                    if *v > 0.0 {
                        *x += d;
                    }
                }
            });
        }
        Op::Gelu { a } => {
            let va = g.nodes[a.0].value.clone();
            g.accumulate(*a, |ga| {
                for ((x, d), v) in ga.iter_mut().zip(dy).zip(va.data()) {
                    *x += d * kernels::gelu_grad(*v);
                }
            });
        }
        Op::Exp { a } => {
            g.accumulate(*a, |ga| {
                for ((x, d), y) in ga.iter_mut().zip(dy).zip(out.data()) {
                    *x += d * y;
                }
            });
        }
        Op::Ln { a } => {
            let va = g.nodes[a.0].value.clone();
            g.accumulate(*a, |ga| {
                for ((x, d), v) in ga.iter_mut().zip(dy).zip(va.data()) {
                    *x += d / v;
                }
            });
        }
        Op::Softmax { a } => {
            let cols = out.cols();
            g.accumulate(*a, |ga| {
                for ((gr, dr), yr) in ga.chunks_mut(cols).zip(dy.chunks(cols)).zip(out.data().chunks(cols)) {
                    let s = kernels::dot(dr, yr);
                    for ((x, d), y) in gr.iter_mut().zip(dr).zip(yr) {
                        *x += y * (d - s);
                    }
                }
            });
        }
        Op::LogSoftmax { a } => {
            let cols = out.cols();
            g.accumulate(*a, |ga| {
                for ((gr, dr), yr) in ga.chunks_mut(cols).zip(dy.chunks(cols)).zip(out.data().chunks(cols)) {
                    let s: f64 = dr.iter().sum();
                    for ((x, d), y) in gr.iter_mut().zip(dr).zip(yr) {
                        *x += d - libm::exp(*y) * s;
                    }
                }
            });
        }
        Op::LayerNorm { x, gain, bias, xhat, inv_std } => {
            let d = out.cols();
            let vg = g.nodes[gain.0].value.clone();
            g.accumulate(*gain, |gg| {
                for (dr, hr) in dy.chunks(d).zip(xhat.chunks(d)) {
                    for ((x, dv), h) in gg.iter_mut().zip(dr).zip(hr) {
                        *x += dv * h;
                    }
                }
            });
            g.accumulate(*bias, |gb| {
                for dr in dy.chunks(d) {
                    add_into(gb, dr);
                }
            });
            g.accumulate(*x, |gx| {
                let mut dxhat = vec![0.0; d];
                for (r, ((gr, dr), hr)) in gx.chunks_mut(d).zip(dy.chunks(d)).zip(xhat.chunks(d)).enumerate() {
                    for ((t, dv), gv) in dxhat.iter_mut().zip(dr).zip(vg.data()) {
                        *t = dv * gv;
                    }
                    let mean_d = dxhat.iter().sum::<f64>() / d as f64;
                    let mean_dh = kernels::dot(&dxhat, hr) / d as f64;
                    for ((xv, t), h) in gr.iter_mut().zip(&dxhat).zip(hr) {
                        *xv += inv_std[r] * (t - mean_d - h * mean_dh);
                    }
                }
            });
        }
        Op::Conv1d { x, kernels: kern, bias, stride, padding, cols } => {
            let vk = g.nodes[kern.0].value.clone();
            let ks = vk.shape();
            let (c_out, c_in, k) = (ks[0], ks[1], ks[2]);
            let out_len = out.rows();
            let width = c_in * k;
            let dout = MatRef::new(dy, out_len, c_out);
            if let Some(b) = bias {
                g.accumulate(*b, |gb| {
                    for row in dy.chunks(c_out) {
                        add_into(gb, row);
                    }
                });
            }
            g.accumulate(*kern, |gk| {
                kernels::gemm(dout.t(), MatRef::new(cols, out_len, width), gk, 1.0, 1.0);
            });
            if g.wants_grad(*x) {
                let len = g.nodes[x.0].value.rows();
                let mut dcols = vec![0.0; out_len * width];
                kernels::gemm(dout, MatRef::new(vk.data(), c_out, width), &mut dcols, 1.0, 0.0);
                g.accumulate(*x, |gx| kernels::col2im(&dcols, gx, len, c_in, k, *stride, *padding, out_len));
            }
        }
        Op::Embedding { table, ids, scale } => {
            let d = out.cols();
            g.accumulate(*table, |gt| {
                for (r, &id) in ids.iter().enumerate() {
                    for (x, dv) in gt[id * d..(id + 1) * d].iter_mut().zip(&dy[r * d..(r + 1) * d]) {
                        *x += dv * scale;
                    }
                }
            });
        }
        Op::Attention { q, k, v, layout, probs } => {
            attention_backward(g, *q, *k, *v, layout, probs, dy);
        }
        Op::TileRows { a, times } => {
            let n = g.nodes[a.0].value.numel();
            g.accumulate(*a, |ga| {
                for t in 0..*times {
                    add_into(ga, &dy[t * n..(t + 1) * n]);
                }
            });
        }
        Op::ConcatRows { parts } => {
            let mut offset = 0;
            for p in parts {
                let n = g.nodes[p.0].value.numel();
                g.accumulate(*p, |gp| add_into(gp, &dy[offset..offset + n]));
                offset += n;
            }
        }
        Op::SliceRows { a, start } => {
            let c = out.cols();
            let off = start * c;
            g.accumulate(*a, |ga| add_into(&mut ga[off..off + dy.len()], dy));
        }
        Op::Transpose { a } => {
            let (r, c) = (out.shape()[1], out.shape()[0]);
            g.accumulate(*a, |ga| {
                for i in 0..r {
                    for j in 0..c {
                        ga[i * c + j] += dy[j * r + i];
                    }
                }
            });
        }
        Op::Reshape { a } => {
            g.accumulate(*a, |ga| add_into(ga, dy));
        }
        Op::NormalizeRows { a, norms, eps } => {
            let c = out.cols().max(1);
            g.accumulate(*a, |ga| {
                for (r, ((gr, dr), yr)) in ga.chunks_mut(c).zip(dy.chunks(c)).zip(out.data().chunks(c)).enumerate() {
                    let n = norms[r];
                    if n > *eps {
                        let s = kernels::dot(dr, yr);
                        for ((x, d), y) in gr.iter_mut().zip(dr).zip(yr) {
                            *x += (d - y * s) / n;
                        }
                    } else {
                        for (x, d) in gr.iter_mut().zip(dr) {
                            *x += d / eps;
                        }
                    }
                }
            });
        }
        Op::CrossEntropy { logits, targets, weights, smoothing, probs } => {
            let vocab = g.nodes[logits.0].value.cols();
            let up = dy[0];
            let uniform = smoothing / vocab as f64;
            g.accumulate(*logits, |gl| {
                for (r, &y) in targets.iter().enumerate() {
                    let w = weights[r];
                    if w == 0.0 {
                        continue;
                    }
                    let row = &mut gl[r * vocab..(r + 1) * vocab];
                    let p = &probs[r * vocab..(r + 1) * vocab];
                    for (c, (x, pv)) in row.iter_mut().zip(p).enumerate() {
                        let target = if c == y { 1.0 - smoothing } else { 0.0 } + uniform;
                        *x += up * w * (pv - target);
                    }
                }
            });
        }
    }
    g.nodes[idx].op = op;
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

fn attention_backward(
    g: &mut Graph,
    q: super::Var,
    k: super::Var,
    v: super::Var,
    layout: &super::AttentionLayout,
    probs: &[f64],
    dy: &[f64],
) {
    let (vq, vk, vv) = (g.nodes[q.0].value.clone(), g.nodes[k.0].value.clone(), g.nodes[v.0].value.clone());
    let d = vq.cols();
    let heads = layout.heads;
    let dh = d / heads;
    let scale = 1.0 / libm::sqrt(dh as f64);
    let mut dq = vec![0.0; vq.numel()];
    let mut dk = vec![0.0; vk.numel()];
    let mut dv = vec![0.0; vv.numel()];
    let mut dp: Vec<f64> = Vec::new();
    for (s, (qs, ks)) in layout.query_segments.iter().zip(&layout.key_segments).enumerate() {
        for h in 0..heads {
            let p = layout.block(probs, s, h);
            let col = h * dh;
            dp.clear();
            dp.resize(ks.len, 0.0);
            for i in 0..qs.len {
                let qi = (qs.start + i) * d + col;
                let dyrow = &dy[qi..qi + dh];
                let prow = &p[i * ks.len..(i + 1) * ks.len];
                // dP_ij = dy_i · v_j ; dV_j += P_ij dy_i
                for j in 0..ks.len {
                    let vj = (ks.start + j) * d + col;
                    dp[j] = kernels::dot(dyrow, &vv.data()[vj..vj + dh]);
                    let w = prow[j];
                    if w != 0.0 {
                        for (x, dyv) in dv[vj..vj + dh].iter_mut().zip(dyrow) {
                            *x += w * dyv;
                        }
                    }
                }
                let s_dot = kernels::dot(&dp, prow);
                for j in 0..ks.len {
                    let ds = prow[j] * (dp[j] - s_dot) * scale;
                    if ds == 0.0 {
                        continue;
                    }
                    let kj = (ks.start + j) * d + col;
                    for c in 0..dh {
                        dq[qi + c] += ds * vk.data()[kj + c];
                        dk[kj + c] += ds * vq.data()[qi + c];
                    }
                }
            }
        }
    }
    g.accumulate(q, |gq| add_into(gq, &dq));
    g.accumulate(k, |gk| add_into(gk, &dk));
    g.accumulate(v, |gv| add_into(gv, &dv));
}
