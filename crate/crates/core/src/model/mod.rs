//! The translation model: text and speech branches, shared encoder,
//! semantic projection and decoder, plus graph-level and value-level entry
//! points.

mod config;
mod decoder;
mod encoders;
mod generate;
mod projection;

use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use config::{ConvStackConfig, ModelConfig};
pub use generate::{argmax, beam_search, greedy_search, Hypothesis, StepScorer};

use crate::corpus::{FrameSequence, TokenSequence, BOS};
use crate::error::{Error, Result};
use crate::nn::{packed_positions, Bound, ParamGroup, ParamId, ParamStore};
use crate::tensor::{Graph, Segment, Tensor, Var};
use decoder::Decoder;
use encoders::{embed_tokens, EncoderLayer, SpeechEncoder, TextEmbedding};
use projection::Projection;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Modality {
    Text,
    Speech,
}

/// Shared-encoder output `Ĥ` for one input.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextualFeatures {
    /// `l × d`.
    pub values: Tensor,
    pub modality: Modality,
}

impl ContextualFeatures {
    pub fn len(&self) -> usize {
        self.values.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Fixed-size `m × d` memory produced by the semantic projection.
#[derive(Debug, Clone, PartialEq)]
pub struct SemanticMemory {
    pub values: Tensor,
    pub modality: Modality,
}

/// One model input of either modality.
#[derive(Debug, Clone, Copy)]
pub enum Source<'a> {
    Text(&'a TokenSequence),
    Speech(&'a FrameSequence),
}

impl Source<'_> {
    pub fn modality(&self) -> Modality {
        match self {
            Source::Text(_) => Modality::Text,
            Source::Speech(_) => Modality::Speech,
        }
    }
}

/// Packed rows on a graph together with the per-sequence segments.
#[derive(Debug, Clone)]
pub struct Packed {
    pub var: Var,
    pub segments: Vec<Segment>,
}

/// Semantic memories of a packed batch and the final projection layer's
/// attention node (`m × l` probabilities per segment and head).
#[derive(Debug, Clone)]
pub struct Projected {
    pub memory: Packed,
    pub attention: Var,
}

#[derive(Debug, Clone)]
pub struct Chimera {
    config: ModelConfig,
    params: ParamStore,
    text: TextEmbedding,
    speech: SpeechEncoder,
    encoder: Vec<EncoderLayer>,
    projection: Projection,
    decoder: Decoder,
}

impl Chimera {
    /// Freshly initialized model; initialization depends only on `seed`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let text = TextEmbedding::new(&mut params, &mut rng, &config);
        let speech = SpeechEncoder::new(&mut params, &mut rng, &config);
        let encoder = (0..config.encoder_layers)
            .map(|i| EncoderLayer::new(&mut params, &mut rng, &alloc::format!("encoder.{i}"), ParamGroup::SharedEncoder, &config))
            .collect();
        let projection = Projection::new(&mut params, &mut rng, &config);
        let decoder = Decoder::new(&mut params, &mut rng, &config);
        Ok(Self { config, params, text, speech, encoder, projection, decoder })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    /// Handle of the memory-query matrix `M₀`.
    pub fn memory_queries(&self) -> ParamId {
        self.projection.queries
    }

    /// Graph session with every parameter of a `frozen` group recorded as a constant.
    pub fn session(&self, frozen: impl Fn(ParamGroup) -> bool, finite_checks: bool) -> Session<'_> {
        let mut graph = Graph::new().with_finite_checks(finite_checks);
        let params = self.params.bind(&mut graph, frozen);
        Session { model: self, graph, params }
    }

    /// Session for inference: nothing requires a gradient.
    pub fn inference(&self) -> Session<'_> {
        self.session(|_| true, true)
    }

    /// Row `i` is `table[id_i]·sqrt(d) + PE(i)`.
    pub fn embed_text(&self, tokens: &TokenSequence) -> Result<Tensor> {
        let mut s = self.inference();
        let x = s.embed_text(&[tokens.ids()])?;
        Ok(s.graph.value(x.var).clone())
    }

    /// Frame encoder output (`l_feat × channels`) for one utterance.
    pub fn encode_speech_frames(&self, frames: &FrameSequence) -> Result<Tensor> {
        let mut s = self.inference();
        let x = self.speech.frontend(&mut s.graph, &s.params, frames)?;
        Ok(s.graph.value(x).clone())
    }

    /// Length-reducing CNN applied to frame-encoder features; `l × channels` → `l' × d`.
    pub fn downsample_cnn(&self, features: &Tensor) -> Result<Tensor> {
        let mut s = self.inference();
        let x = s.graph.constant(features.clone());
        let y = self.speech.downsample(&mut s.graph, &s.params, x)?;
        Ok(s.graph.value(y).clone())
    }

    /// Shared encoder applied to branch output that already carries positions.
    pub fn shared_encode(&self, branch_output: &Tensor, modality: Modality) -> Result<ContextualFeatures> {
        let mut s = self.inference();
        let x = s.graph.constant(branch_output.clone());
        let segments = alloc::vec![Segment::new(0, branch_output.rows())];
        let h = s.shared_encode(&Packed { var: x, segments })?;
        Ok(ContextualFeatures { values: s.graph.value(h.var).clone(), modality })
    }

    pub fn encode(&self, source: Source<'_>) -> Result<ContextualFeatures> {
        let mut s = self.inference();
        let h = s.encode(&[source])?;
        Ok(ContextualFeatures { values: s.graph.value(h.var).clone(), modality: source.modality() })
    }

    /// One projection layer on explicit queries `I` (`m × d`).
    pub fn projection_layer(&self, layer: usize, queries: &Tensor, context: &ContextualFeatures) -> Result<Tensor> {
        let l = self
            .projection
            .layers
            .get(layer)
            .ok_or_else(|| Error::Config(alloc::format!("no projection layer {layer}")))?;
        let mut s = self.inference();
        let q = s.graph.constant(queries.clone());
        let h = s.graph.constant(context.values.clone());
        let qs = [Segment::new(0, queries.rows())];
        let ks = [Segment::new(0, context.len())];
        let out = l.forward(&mut s.graph, &s.params, q, &qs, h, &ks)?;
        Ok(s.graph.value(out.output).clone())
    }

    pub fn project(&self, context: &ContextualFeatures) -> Result<SemanticMemory> {
        let mut s = self.inference();
        let h = s.graph.constant(context.values.clone());
        let p = s.project(&Packed { var: h, segments: alloc::vec![Segment::new(0, context.len())] })?;
        Ok(SemanticMemory { values: s.graph.value(p.memory.var).clone(), modality: context.modality })
    }

    /// Memories for a batch of inputs, computed in one packed pass.
    pub fn memories(&self, sources: &[Source<'_>]) -> Result<Vec<SemanticMemory>> {
        if sources.is_empty() {
            return Ok(Vec::new());
        }
        let mut s = self.inference();
        let h = s.encode(sources)?;
        let p = s.project(&h)?;
        let values = s.graph.value(p.memory.var);
        Ok(sources
            .iter()
            .zip(&p.memory.segments)
            .map(|(src, seg)| SemanticMemory { values: rows_of(values, *seg), modality: src.modality() })
            .collect())
    }

    pub fn memory(&self, source: Source<'_>) -> Result<SemanticMemory> {
        Ok(self.memories(&[source])?.swap_remove(0))
    }

    /// Teacher-forced logits (`t × V`) for an input prefix starting with BOS.
    pub fn decode_train(&self, memory: &SemanticMemory, target: &TokenSequence) -> Result<Tensor> {
        if target.ids()[0] != BOS {
            return Err(Error::Config("decoder input must begin with BOS".into()));
        }
        let mut s = self.inference();
        let m = s.graph.constant(memory.values.clone());
        let mem = Packed { var: m, segments: alloc::vec![Segment::new(0, memory.values.rows())] };
        let logits = s.decode(&mem, &[target.ids()])?;
        Ok(s.graph.value(logits.var).clone())
    }

    /// Next-token scorer conditioned on `memory`.
    pub fn scorer<'a>(&'a self, memory: &'a SemanticMemory) -> MemoryScorer<'a> {
        MemoryScorer { model: self, memory }
    }

    /// Argmax decoding; the result starts with BOS and ends with EOS unless
    /// `max_len` tokens were generated first.
    pub fn greedy_decode(&self, memory: &SemanticMemory, max_len: usize) -> Result<TokenSequence> {
        TokenSequence::new(greedy_search(&mut self.scorer(memory), max_len)?.tokens)
    }

    pub fn beam_search(&self, memory: &SemanticMemory, beam: usize, max_len: usize, alpha: f64) -> Result<Hypothesis> {
        beam_search(&mut self.scorer(memory), beam, max_len, alpha)
    }

    /// Greedy decoding of many memories at once; each output is the
    /// generated content without BOS/EOS.
    pub fn greedy_decode_batch(&self, memories: &[SemanticMemory], max_len: usize) -> Result<Vec<Vec<u32>>> {
        let mut prefixes: Vec<Vec<u32>> = alloc::vec![alloc::vec![BOS]; memories.len()];
        let mut done = alloc::vec![false; memories.len()];
        for _ in 0..max_len {
            let active: Vec<usize> = (0..memories.len()).filter(|&i| !done[i]).collect();
            if active.is_empty() {
                break;
            }
            let mut s = self.inference();
            let mem_values: Vec<&Tensor> = active.iter().map(|&i| &memories[i].values).collect();
            let mem = s.constant_rows(&mem_values)?;
            let inputs: Vec<&[u32]> = active.iter().map(|&i| prefixes[i].as_slice()).collect();
            let logits = s.decode(&mem, &inputs)?;
            let values = s.graph.value(logits.var);
            for (seg, &i) in logits.segments.iter().zip(&active) {
                let next = argmax(values.row(seg.end() - 1)) as u32;
                if next == crate::corpus::EOS {
                    done[i] = true;
                } else {
                    prefixes[i].push(next);
                }
            }
        }
        Ok(prefixes.into_iter().map(|mut p| p.split_off(1)).collect())
    }

    /// Canonical `(name, value)` list of every parameter.
    pub fn named_params(&self) -> Vec<(&str, &Tensor)> {
        self.params.iter().map(|(_, p)| (p.name.as_str(), p.value())).collect()
    }

    /// Replaces all parameter values; names and shapes must match exactly.
    pub fn load_params<'a>(&mut self, values: impl IntoIterator<Item = (&'a str, &'a Tensor)>) -> Result<()> {
        self.params.load(values)
    }
}

/// Rows of one segment as a standalone matrix.
pub fn rows_of(t: &Tensor, seg: Segment) -> Tensor {
    let c = t.cols();
    Tensor::new(alloc::vec![seg.len, c], t.data()[seg.start * c..seg.end() * c].to_vec())
        .expect("rows of a finite tensor")
}

/// Graph under construction with the model's parameters bound to it.
pub struct Session<'m> {
    model: &'m Chimera,
    pub graph: Graph,
    pub params: Bound,
}

impl Session<'_> {
    pub fn model(&self) -> &Chimera {
        self.model
    }

    pub fn param(&self, id: ParamId) -> Var {
        self.params.var(id)
    }

    /// Stacks constant matrices into one packed block.
    pub fn constant_rows(&mut self, parts: &[&Tensor]) -> Result<Packed> {
        let lens: Vec<usize> = parts.iter().map(|t| t.rows()).collect();
        let cols = parts.first().map_or(0, |t| t.cols());
        let mut data = Vec::with_capacity(lens.iter().sum::<usize>() * cols);
        for t in parts {
            if t.cols() != cols {
                return Err(Error::Mismatch(alloc::format!("row width {} differs from {cols}", t.cols())));
            }
            data.extend_from_slice(t.data());
        }
        let var = self.graph.constant(Tensor::new(alloc::vec![lens.iter().sum(), cols], data)?);
        Ok(Packed { var, segments: Segment::packed(&lens) })
    }

    /// Text branch for packed token sequences.
    pub fn embed_text(&mut self, seqs: &[&[u32]]) -> Result<Packed> {
        let cfg = &self.model.config;
        let (var, segments) = embed_tokens(&mut self.graph, self.params.var(self.model.text.table), seqs, cfg.d_model)?;
        Ok(Packed { var, segments })
    }

    /// Speech branch: frame encoder, downsampling CNN, then positions.
    pub fn embed_speech(&mut self, utterances: &[&FrameSequence]) -> Result<Packed> {
        let cfg = &self.model.config;
        let mut parts = Vec::with_capacity(utterances.len());
        let mut lens = Vec::with_capacity(utterances.len());
        for u in utterances {
            if u.dim() != cfg.speech_dim {
                return Err(Error::Mismatch(alloc::format!("speech frames have {} features, model expects {}", u.dim(), cfg.speech_dim)));
            }
            let f = self.model.speech.frontend(&mut self.graph, &self.params, u)?;
            let x = self.model.speech.downsample(&mut self.graph, &self.params, f)?;
            lens.push(self.graph.shape(x)[0]);
            parts.push(x);
        }
        let segments = Segment::packed(&lens);
        let x = if parts.len() == 1 { parts[0] } else { self.graph.concat_rows(&parts)? };
        let pe = self.graph.constant(packed_positions(&segments, cfg.d_model));
        Ok(Packed { var: self.graph.add(x, pe)?, segments })
    }

    pub fn shared_encode(&mut self, x: &Packed) -> Result<Packed> {
        let max = self.model.config.max_positions;
        if let Some(s) = x.segments.iter().find(|s| s.len > max) {
            return Err(Error::Length { len: s.len, max });
        }
        let mut h = x.var;
        for layer in &self.model.encoder {
            h = layer.forward(&mut self.graph, &self.params, h, &x.segments)?;
        }
        Ok(Packed { var: h, segments: x.segments.clone() })
    }

    /// Branch plus shared encoder for inputs of a single modality.
    pub fn encode(&mut self, sources: &[Source<'_>]) -> Result<Packed> {
        let Some(first) = sources.first() else {
            return Err(Error::Empty("batch"));
        };
        let x = match first {
            Source::Text(_) => {
                let seqs = sources
                    .iter()
                    .map(|s| match s {
                        Source::Text(t) => Ok(t.ids()),
                        Source::Speech(_) => Err(Error::Mismatch("mixed modalities in one batch".into())),
                    })
                    .collect::<Result<Vec<_>>>()?;
                self.embed_text(&seqs)?
            }
            Source::Speech(_) => {
                let utts = sources
                    .iter()
                    .map(|s| match s {
                        Source::Speech(f) => Ok(*f),
                        Source::Text(_) => Err(Error::Mismatch("mixed modalities in one batch".into())),
                    })
                    .collect::<Result<Vec<_>>>()?;
                self.embed_speech(&utts)?
            }
        };
        self.shared_encode(&x)
    }

    pub fn project(&mut self, context: &Packed) -> Result<Projected> {
        let (var, segments, attention) = self.model.projection.forward(&mut self.graph, &self.params, context.var, &context.segments)?;
        Ok(Projected { memory: Packed { var, segments }, attention })
    }

    /// Teacher-forced logits; input `s` reads memory segment `s`.
    pub fn decode(&mut self, memory: &Packed, inputs: &[&[u32]]) -> Result<Packed> {
        let (var, segments) = self.model.decoder.forward(
            &mut self.graph,
            &self.params,
            &self.model.config,
            memory.var,
            &memory.segments,
            inputs,
        )?;
        Ok(Packed { var, segments })
    }
}

/// [`StepScorer`] running the decoder on one fixed memory. All prefixes of
/// a call share the same memory rows.
pub struct MemoryScorer<'a> {
    model: &'a Chimera,
    memory: &'a SemanticMemory,
}

impl StepScorer for MemoryScorer<'_> {
    fn next_log_probs(&mut self, prefixes: &[&[u32]]) -> Result<Vec<Vec<f64>>> {
        let mut s = self.model.inference();
        let m = s.graph.constant(self.memory.values.clone());
        let shared = Segment::new(0, self.memory.values.rows());
        let mem = Packed { var: m, segments: alloc::vec![shared; prefixes.len()] };
        let logits = s.decode(&mem, prefixes)?;
        let values = s.graph.value(logits.var);
        Ok(logits
            .segments
            .iter()
            .map(|seg| {
                let row = values.row(seg.end() - 1);
                let lse = crate::tensor::kernels::log_sum_exp(row);
                row.iter().map(|v| v - lse).collect()
            })
            .collect())
    }
}
