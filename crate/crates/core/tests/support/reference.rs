//! Loop-based forward pass over named parameters, written independently of
//! the graph kernels.

use chimera_core::model::Chimera;

pub type Mat = Vec<Vec<f64>>;

pub struct Reference<'a> {
    pub model: &'a Chimera,
}

fn erf_gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

pub fn max_diff(a: &Mat, b: &[f64]) -> f64 {
    let flat: Vec<f64> = a.iter().flatten().copied().collect();
    assert_eq!(flat.len(), b.len(), "size mismatch");
    flat.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn to_mat(data: &[f64], cols: usize) -> Mat {
    data.chunks(cols).map(|r| r.to_vec()).collect()
}

impl Reference<'_> {
    fn raw(&self, name: &str) -> (&[usize], &[f64]) {
        let id = self.model.params().find(name).unwrap_or_else(|| panic!("no parameter {name}"));
        let t = self.model.params().get(id);
        (t.shape(), t.data())
    }

    fn vector(&self, name: &str) -> Vec<f64> {
        self.raw(name).1.to_vec()
    }

    fn matrix(&self, name: &str) -> Mat {
        let (shape, data) = self.raw(name);
        to_mat(data, shape[1])
    }

    pub fn linear(&self, x: &Mat, name: &str) -> Mat {
        let w = self.matrix(&format!("{name}.weight"));
        let b = self.vector(&format!("{name}.bias"));
        x.iter()
            .map(|row| {
                (0..b.len())
                    .map(|j| b[j] + row.iter().enumerate().map(|(i, v)| v * w[i][j]).sum::<f64>())
                    .collect()
            })
            .collect()
    }

    pub fn layer_norm(&self, x: &Mat, name: &str) -> Mat {
        let eps = self.model.config().layer_norm_eps;
        let gain = self.vector(&format!("{name}.gain"));
        let bias = self.vector(&format!("{name}.bias"));
        x.iter()
            .map(|row| {
                let n = row.len() as f64;
                let mean = row.iter().sum::<f64>() / n;
                let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
                row.iter()
                    .enumerate()
                    .map(|(j, v)| (v - mean) / (var + eps).sqrt() * gain[j] + bias[j])
                    .collect()
            })
            .collect()
    }

    /// Returns the output and the head-averaged probabilities (`q × k`).
    pub fn attention(&self, queries: &Mat, context: &Mat, name: &str, causal: bool) -> (Mat, Mat) {
        let heads = self.model.config().heads;
        let q = self.linear(queries, &format!("{name}.query"));
        let k = self.linear(context, &format!("{name}.key"));
        let v = self.linear(context, &format!("{name}.value"));
        let d = q[0].len();
        let dh = d / heads;
        let mut mixed = vec![vec![0.0; d]; q.len()];
        let mut avg = vec![vec![0.0; k.len()]; q.len()];
        for h in 0..heads {
            let cols = h * dh..(h + 1) * dh;
            for i in 0..q.len() {
                let visible = if causal { i + 1 } else { k.len() };
                let scores: Vec<f64> = (0..visible)
                    .map(|j| cols.clone().map(|c| q[i][c] * k[j][c]).sum::<f64>() / (dh as f64).sqrt())
                    .collect();
                let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
                let z: f64 = exps.iter().sum();
                for j in 0..visible {
                    let p = exps[j] / z;
                    avg[i][j] += p / heads as f64;
                    for c in cols.clone() {
                        mixed[i][c] += p * v[j][c];
                    }
                }
            }
        }
        (self.linear(&mixed, &format!("{name}.output")), avg)
    }

    fn add_norm(&self, x: &Mat, y: &Mat, name: &str) -> Mat {
        let s: Mat = x.iter().zip(y).map(|(a, b)| a.iter().zip(b).map(|(u, v)| u + v).collect()).collect();
        self.layer_norm(&s, name)
    }

    fn ffn(&self, x: &Mat, name: &str) -> Mat {
        let h = self.linear(x, &format!("{name}.inner"));
        let h: Mat = h.iter().map(|r| r.iter().map(|v| v.max(0.0)).collect()).collect();
        self.linear(&h, &format!("{name}.outer"))
    }

    fn positions(&self, len: usize) -> Mat {
        let d = self.model.config().d_model;
        (0..len)
            .map(|p| {
                (0..d)
                    .map(|j| {
                        let i2 = (j / 2 * 2) as f64;
                        let angle = p as f64 / 10000f64.powf(i2 / d as f64);
                        if j % 2 == 0 { angle.sin() } else { angle.cos() }
                    })
                    .collect()
            })
            .collect()
    }

    pub fn embed(&self, table: &str, ids: &[u32]) -> Mat {
        let t = self.matrix(table);
        let scale = (self.model.config().d_model as f64).sqrt();
        let pe = self.positions(ids.len());
        ids.iter()
            .enumerate()
            .map(|(i, &id)| t[id as usize].iter().zip(&pe[i]).map(|(a, p)| a * scale + p).collect())
            .collect()
    }

    fn conv(&self, x: &Mat, name: &str, stride: usize, padding: usize) -> Mat {
        let (shape, data) = self.raw(&format!("{name}.kernel"));
        let (c_out, c_in, k) = (shape[0], shape[1], shape[2]);
        let bias = self.vector(&format!("{name}.bias"));
        let len = x.len() as isize;
        let out_len = (x.len() + 2 * padding - k) / stride + 1;
        (0..out_len)
            .map(|t| {
                (0..c_out)
                    .map(|o| {
                        let mut acc = bias[o];
                        for c in 0..c_in {
                            for j in 0..k {
                                let pos = (t * stride + j) as isize - padding as isize;
                                if pos >= 0 && pos < len {
                                    acc += data[(o * c_in + c) * k + j] * x[pos as usize][c];
                                }
                            }
                        }
                        acc
                    })
                    .collect()
            })
            .collect()
    }

    pub fn frontend(&self, frames: &Mat) -> Mat {
        let cfg = self.model.config();
        let mut x = frames.clone();
        for i in 0..cfg.frontend.layers {
            x = self.conv(&x, &format!("speech.frontend.{i}"), cfg.frontend.stride, cfg.frontend.padding);
            x = x.iter().map(|r| r.iter().map(|&v| erf_gelu(v)).collect()).collect();
        }
        x
    }

    pub fn downsample(&self, features: &Mat) -> Mat {
        let cfg = self.model.config();
        let mut x = features.clone();
        for i in 0..cfg.downsample.layers {
            x = self.conv(&x, &format!("speech.downsample.{i}"), cfg.downsample.stride, cfg.downsample.padding);
            if i + 1 != cfg.downsample.layers {
                x = x.iter().map(|r| r.iter().map(|&v| erf_gelu(v)).collect()).collect();
            }
        }
        x
    }

    pub fn speech_branch(&self, frames: &Mat) -> Mat {
        let x = self.downsample(&self.frontend(frames));
        let pe = self.positions(x.len());
        x.iter().zip(&pe).map(|(a, p)| a.iter().zip(p).map(|(u, v)| u + v).collect()).collect()
    }

    pub fn shared_encode(&self, x: &Mat) -> Mat {
        let mut h = x.clone();
        for l in 0..self.model.config().encoder_layers {
            let p = format!("encoder.{l}");
            let (a, _) = self.attention(&h, &h, &format!("{p}.self_attention"), false);
            h = self.add_norm(&h, &a, &format!("{p}.self_attention_norm"));
            let f = self.ffn(&h, &format!("{p}.ffn"));
            h = self.add_norm(&h, &f, &format!("{p}.ffn_norm"));
        }
        h
    }

    pub fn projection_layer(&self, layer: usize, queries: &Mat, context: &Mat) -> (Mat, Mat) {
        let p = format!("projection.{layer}");
        let (a, probs) = self.attention(queries, context, &format!("{p}.cross_attention"), false);
        let x = self.add_norm(queries, &a, &format!("{p}.cross_attention_norm"));
        let f = self.ffn(&x, &format!("{p}.ffn"));
        (self.add_norm(&x, &f, &format!("{p}.ffn_norm")), probs)
    }

    pub fn project(&self, context: &Mat) -> Mat {
        let mut x = self.matrix("projection.queries");
        for l in 0..self.model.config().projection_layers {
            x = self.projection_layer(l, &x, context).0;
        }
        x
    }

    pub fn decode(&self, memory: &Mat, input: &[u32]) -> Mat {
        let cfg = self.model.config();
        let mut x = self.embed("decoder.embedding", input);
        for l in 0..cfg.decoder_layers {
            let p = format!("decoder.{l}");
            let (a, _) = self.attention(&x, &x, &format!("{p}.self_attention"), true);
            x = self.add_norm(&x, &a, &format!("{p}.self_attention_norm"));
            let (c, _) = self.attention(&x, memory, &format!("{p}.cross_attention"), false);
            x = self.add_norm(&x, &c, &format!("{p}.cross_attention_norm"));
            let f = self.ffn(&x, &format!("{p}.ffn"));
            x = self.add_norm(&x, &f, &format!("{p}.ffn_norm"));
        }
        if cfg.tie_output {
            let e = self.matrix("decoder.embedding");
            let b = self.vector("decoder.output.bias");
            x.iter()
                .map(|row| e.iter().zip(&b).map(|(er, bv)| bv + er.iter().zip(row).map(|(u, v)| u * v).sum::<f64>()).collect())
                .collect()
        } else {
            self.linear(&x, "decoder.output")
        }
    }
}
