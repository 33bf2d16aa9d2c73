//! Optimization, the pretrain / fine-tune regime, freezing and checkpoints.

mod checkpoint;
mod optim;

use alloc::collections::VecDeque;
use alloc::string::String;
use alloc::vec::Vec;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use checkpoint::{average_checkpoints, best_window, ModelCheckpoint};
pub use optim::{clip_global_norm, global_norm, lr_schedule, Adam, AdamConfig, AdamSlot};

use crate::corpus::{make_batches, Batch, BatchCaps, MtPair, StTriplet, TokenSequence};
use crate::error::{Error, Result};
use crate::model::{Chimera, Session, Source};
use crate::nn::{ParamGroup, ParamId};
use crate::objectives::{
    contrastive_loss_graph, mt_loss_graph, st_loss_graph, total_loss_graph, LossConfig, LossReport, LossWeights,
};
use crate::tensor::{Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Stage {
    PretrainMt,
    FinetuneMultitask,
}

/// Parameter groups held fixed during fine-tuning.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FreezeFlags {
    pub projection: bool,
    pub decoder: bool,
}

impl FreezeFlags {
    pub fn freezes(&self, group: ParamGroup) -> bool {
        match group {
            ParamGroup::Projection => self.projection,
            ParamGroup::Decoder => self.decoder,
            _ => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub stage: Stage,
    pub peak_lr: f64,
    pub warmup: u64,
    pub max_updates: u64,
    pub weights: LossWeights,
    pub loss: LossConfig,
    pub freeze: FreezeFlags,
    /// Caps on source tokens per MT batch.
    pub mt_caps: BatchCaps,
    /// Caps on speech frames per ST batch.
    pub st_caps: BatchCaps,
    pub seed: u64,
    /// Updates between dev-loss evaluations; each evaluation stores a checkpoint.
    pub checkpoint_every: u64,
    /// Global gradient-norm limit.
    pub clip_norm: Option<f64>,
    /// Reject non-finite values at every graph op.
    pub finite_checks: bool,
    pub adam: AdamConfig,
}

impl TrainConfig {
    /// Full-scale MT pretraining settings.
    pub fn pretrain() -> Self {
        Self {
            stage: Stage::PretrainMt,
            peak_lr: 5e-4,
            warmup: 4000,
            max_updates: 100_000,
            weights: LossWeights { st: 0.0, mt: 1.0, ctr: 0.0 },
            loss: LossConfig::default(),
            freeze: FreezeFlags::default(),
            mt_caps: BatchCaps::new(33_000),
            st_caps: BatchCaps::new(16_000_000),
            seed: 1,
            checkpoint_every: 1000,
            clip_norm: Some(1.0),
            finite_checks: false,
            adam: AdamConfig::default(),
        }
    }

    /// Full-scale multitask fine-tuning settings.
    pub fn finetune() -> Self {
        Self { stage: Stage::FinetuneMultitask, peak_lr: 1e-4, weights: LossWeights::default(), ..Self::pretrain() }
    }

    /// Desk-scale MT pretraining on the synthetic corpus.
    pub fn desk_pretrain() -> Self {
        Self {
            peak_lr: 2e-3,
            warmup: 100,
            max_updates: 2000,
            mt_caps: BatchCaps { max_size: 4096, max_items: Some(16) },
            st_caps: BatchCaps { max_size: 1 << 20, max_items: Some(16) },
            checkpoint_every: 100,
            ..Self::pretrain()
        }
    }

    /// Desk-scale multitask fine-tuning on the synthetic corpus.
    pub fn desk_finetune() -> Self {
        Self { stage: Stage::FinetuneMultitask, weights: LossWeights::default(), max_updates: 3000, ..Self::desk_pretrain() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.peak_lr > 0.0) || !self.peak_lr.is_finite() {
            return Err(Error::Config(alloc::format!("peak_lr {} must be positive", self.peak_lr)));
        }
        if self.warmup == 0 {
            return Err(Error::Config("warmup must be at least 1".into()));
        }
        if self.checkpoint_every == 0 {
            return Err(Error::Config("checkpoint_every must be at least 1".into()));
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0) {
                return Err(Error::Config(alloc::format!("clip_norm {c} must be positive")));
            }
        }
        self.weights.validate()
    }

    /// Groups that receive no updates under this configuration.
    pub fn frozen(&self, group: ParamGroup) -> bool {
        match self.stage {
            Stage::PretrainMt => group.is_speech(),
            Stage::FinetuneMultitask => self.freeze.freezes(group),
        }
    }
}

/// Endless sequence of batches: each epoch is a fresh seeded packing.
#[derive(Debug, Clone)]
pub struct BatchStream {
    sizes: Vec<usize>,
    caps: BatchCaps,
    seed: u64,
    epoch: u64,
    queue: VecDeque<Batch>,
}

impl BatchStream {
    pub fn new(sizes: Vec<usize>, caps: BatchCaps, seed: u64) -> Result<Self> {
        if sizes.is_empty() {
            return Err(Error::Empty("training corpus"));
        }
        Ok(Self { sizes, caps, seed, epoch: 0, queue: VecDeque::new() })
    }

    pub fn next_batch(&mut self) -> Result<Batch> {
        if self.queue.is_empty() {
            let seed = derive_seed(self.seed, self.epoch);
            self.queue.extend(make_batches(&self.sizes, self.caps, seed)?);
            self.epoch += 1;
        }
        Ok(self.queue.pop_front().expect("a packing has at least one batch"))
    }
}

/// Independent 64-bit seed for stream `salt` of `seed`.
pub fn derive_seed(seed: u64, salt: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(salt);
    rng.next_u64()
}

const ST_STREAM: u64 = 1 << 32;
const TRANSCRIPT_STREAM: u64 = 2 << 32;
const EXTERNAL_STREAM: u64 = 3 << 32;

/// Batch streams of a fine-tuning run; also used to replay its ST batches.
pub fn st_stream(triplets: &[StTriplet], cfg: &TrainConfig) -> Result<BatchStream> {
    BatchStream::new(triplets.iter().map(|t| t.speech.len()).collect(), cfg.st_caps, derive_seed(cfg.seed, ST_STREAM))
}

fn mt_stream(pairs: &[(&TokenSequence, &TokenSequence)], cfg: &TrainConfig, salt: u64) -> Result<BatchStream> {
    BatchStream::new(pairs.iter().map(|(u, _)| u.len()).collect(), cfg.mt_caps, derive_seed(cfg.seed, salt))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: u64,
    pub lr: f64,
    pub report: LossReport,
    /// Global gradient norm before clipping.
    pub grad_norm: f64,
}

/// Returned by the per-update callback.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Control {
    Continue,
    Stop,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub log: Vec<StepLog>,
    pub checkpoints: Vec<ModelCheckpoint>,
    pub updates: u64,
}

/// Gradients of every trainable parameter that was reached by the loss.
pub fn collect_grads(s: &Session<'_>) -> Vec<(ParamId, Tensor)> {
    s.model()
        .params()
        .ids()
        .filter_map(|id| {
            let v = s.param(id);
            if !s.graph.requires_grad(v) {
                return None;
            }
            s.graph.grad(v).map(|g| (id, g))
        })
        .collect()
}

/// Clips, checks and applies one set of gradients. Returns the pre-clip norm.
pub fn apply_gradients(
    model: &mut Chimera,
    adam: &mut Adam,
    mut grads: Vec<(ParamId, Tensor)>,
    lr: f64,
    clip: Option<f64>,
    step: u64,
) -> Result<f64> {
    let norm = match clip {
        Some(c) => clip_global_norm(&mut grads, c),
        None => global_norm(&grads),
    };
    if !norm.is_finite() {
        return Err(Error::Diverged { step, detail: alloc::format!("gradient norm {norm}") });
    }
    adam.step(model.params_mut(), &grads, lr)?;
    Ok(norm)
}

fn check_finite(step: u64, report: &LossReport) -> Result<()> {
    if report.total.is_finite() {
        return Ok(());
    }
    Err(Error::Diverged {
        step,
        detail: alloc::format!("loss {} (st {}, mt {}, ctr {})", report.total, report.st, report.mt, report.ctr),
    })
}

fn value(s: &Session<'_>, v: Option<Var>) -> f64 {
    v.map_or(0.0, |v| s.graph.item(v).expect("scalar loss"))
}

/// Mean MT loss over `pairs`, token-weighted, in chunks of `chunk`.
pub fn mt_dev_loss(model: &Chimera, pairs: &[(&TokenSequence, &TokenSequence)], smoothing: f64, chunk: usize) -> Result<f64> {
    let (mut total, mut tokens) = (0.0, 0usize);
    for c in pairs.chunks(chunk.max(1)) {
        let mut s = model.inference();
        let (l, n) = mt_loss_graph(&mut s, c, smoothing)?;
        total += s.graph.item(l).expect("scalar loss") * n as f64;
        tokens += n;
    }
    if tokens == 0 {
        return Err(Error::Empty("dev set"));
    }
    Ok(total / tokens as f64)
}

/// Mean ST loss over `triplets`, token-weighted, in chunks of `chunk`.
pub fn st_dev_loss(model: &Chimera, triplets: &[StTriplet], smoothing: f64, chunk: usize) -> Result<f64> {
    let (mut total, mut tokens) = (0.0, 0usize);
    for c in triplets.chunks(chunk.max(1)) {
        let refs: Vec<&StTriplet> = c.iter().collect();
        let mut s = model.inference();
        let (l, n, _) = st_loss_graph(&mut s, &refs, smoothing)?;
        total += s.graph.item(l).expect("scalar loss") * n as f64;
        tokens += n;
    }
    if tokens == 0 {
        return Err(Error::Empty("dev set"));
    }
    Ok(total / tokens as f64)
}

fn pair_refs(pairs: &[MtPair]) -> Vec<(&TokenSequence, &TokenSequence)> {
    pairs.iter().map(|p| (&p.source, &p.target)).collect()
}

/// Trains `L_MT` through the text path. Speech parameters are never touched.
/// A checkpoint with the dev loss is taken every `checkpoint_every` updates
/// and after the last one; `on_step` may stop training early.
pub fn pretrain_mt(
    model: &mut Chimera,
    train: &[MtPair],
    dev: &[MtPair],
    cfg: &TrainConfig,
    mut on_step: impl FnMut(&StepLog, &Chimera) -> Control,
) -> Result<TrainOutcome> {
    if cfg.stage != Stage::PretrainMt {
        return Err(Error::Config("pretrain_mt needs the pretrain_mt stage".into()));
    }
    cfg.validate()?;
    let train_pairs = pair_refs(train);
    let dev_pairs = if dev.is_empty() { train_pairs.clone() } else { pair_refs(dev) };
    let mut stream = mt_stream(&train_pairs, cfg, EXTERNAL_STREAM)?;
    let mut adam = Adam::new(cfg.adam, model.params().len());
    let mut outcome = TrainOutcome { log: Vec::new(), checkpoints: Vec::new(), updates: 0 };
    let weights = LossWeights { st: 0.0, mt: 1.0, ctr: 0.0 };
    for step in 1..=cfg.max_updates {
        let batch = stream.next_batch()?;
        let pairs: Vec<_> = batch.indices.iter().map(|&i| train_pairs[i]).collect();
        let (grads, report) = {
            let mut s = model.session(|g| cfg.frozen(g), cfg.finite_checks);
            let (mt, n) = mt_loss_graph(&mut s, &pairs, cfg.loss.label_smoothing)?;
            let total = total_loss_graph(&mut s.graph, &weights, None, Some(mt), None)?;
            let mt_value = value(&s, Some(mt));
            let report = LossReport { total: weights.combine(0.0, mt_value, 0.0), mt: mt_value, mt_tokens: n, ..Default::default() };
            check_finite(step, &report)?;
            s.graph.backward(total)?;
            (collect_grads(&s), report)
        };
        let lr = lr_schedule(step, cfg.peak_lr, cfg.warmup);
        let grad_norm = apply_gradients(model, &mut adam, grads, lr, cfg.clip_norm, step)?;
        let log = StepLog { step, lr, report, grad_norm };
        outcome.log.push(log);
        outcome.updates = step;
        let stop = on_step(&log, model) == Control::Stop;
        if step % cfg.checkpoint_every == 0 || step == cfg.max_updates || stop {
            let dev_loss = mt_dev_loss(model, &dev_pairs, cfg.loss.label_smoothing, 32)?;
            outcome.checkpoints.push(ModelCheckpoint::capture(model, step, dev_loss));
        }
        if stop {
            break;
        }
    }
    Ok(outcome)
}

/// Multitask fine-tuning on `λst·L_ST + λmt·L_MT + λctr·L_ctr`.
///
/// Every update draws one ST batch; its `(speech, transcript)` pairs also
/// feed the contrastive term. MT batches alternate between transcript /
/// translation pairs and the external pairs. Each batch source has its own
/// seeded stream, and a zero-weight task draws nothing, so disabling a task
/// leaves the remaining batches unchanged.
pub fn finetune_multitask(
    model: &mut Chimera,
    train: &[StTriplet],
    external: &[MtPair],
    dev: &[StTriplet],
    cfg: &TrainConfig,
    mut on_step: impl FnMut(&StepLog, &Chimera) -> Control,
) -> Result<TrainOutcome> {
    if cfg.stage != Stage::FinetuneMultitask {
        return Err(Error::Config("finetune_multitask needs the finetune_multitask stage".into()));
    }
    cfg.validate()?;
    let w = cfg.weights;
    let dev = if dev.is_empty() { train } else { dev };
    let transcripts: Vec<_> = train.iter().map(|t| (&t.transcript, &t.translation)).collect();
    let external_pairs = pair_refs(external);
    let mut st = st_stream(train, cfg)?;
    let mut mt_streams = Vec::new();
    if w.mt != 0.0 {
        mt_streams.push((transcripts.clone(), mt_stream(&transcripts, cfg, TRANSCRIPT_STREAM)?));
        if !external_pairs.is_empty() {
            mt_streams.push((external_pairs.clone(), mt_stream(&external_pairs, cfg, EXTERNAL_STREAM)?));
        }
    }
    let mut adam = Adam::new(cfg.adam, model.params().len());
    let mut outcome = TrainOutcome { log: Vec::new(), checkpoints: Vec::new(), updates: 0 };
    for step in 1..=cfg.max_updates {
        let st_batch = st.next_batch()?;
        let triplets: Vec<&StTriplet> = st_batch.indices.iter().map(|&i| &train[i]).collect();
        let mt_pairs = if mt_streams.is_empty() {
            Vec::new()
        } else {
            let k = ((step - 1) % mt_streams.len() as u64) as usize;
            let (pairs, stream) = &mut mt_streams[k];
            let b = stream.next_batch()?;
            b.indices.iter().map(|&i| pairs[i]).collect()
        };
        let (grads, report) = {
            let mut s = model.session(|g| cfg.frozen(g), cfg.finite_checks);
            let mut report = LossReport::default();
            let (st_loss, n, speech_memory) = st_loss_graph(&mut s, &triplets, cfg.loss.label_smoothing)?;
            report.st_tokens = n;
            let mt_loss = if mt_pairs.is_empty() {
                None
            } else {
                let (l, n) = mt_loss_graph(&mut s, &mt_pairs, cfg.loss.label_smoothing)?;
                report.mt_tokens = n;
                Some(l)
            };
            let ctr_loss = if w.ctr == 0.0 {
                None
            } else {
                let sources: Vec<Source<'_>> = triplets.iter().map(|t| Source::Text(&t.transcript)).collect();
                let h = s.encode(&sources)?;
                let text_memory = s.project(&h)?.memory;
                report.ctr_pairs = triplets.len();
                Some(contrastive_loss_graph(&mut s.graph, &text_memory, &speech_memory, cfg.loss.tau)?)
            };
            let st_loss = (w.st != 0.0).then_some(st_loss);
            let total = total_loss_graph(&mut s.graph, &w, st_loss, mt_loss, ctr_loss)?;
            report.st = value(&s, st_loss);
            report.mt = value(&s, mt_loss);
            report.ctr = value(&s, ctr_loss);
            report.total = w.combine(report.st, report.mt, report.ctr);
            check_finite(step, &report)?;
            s.graph.backward(total)?;
            (collect_grads(&s), report)
        };
        let lr = lr_schedule(step, cfg.peak_lr, cfg.warmup);
        let grad_norm = apply_gradients(model, &mut adam, grads, lr, cfg.clip_norm, step)?;
        let log = StepLog { step, lr, report, grad_norm };
        outcome.log.push(log);
        outcome.updates = step;
        let stop = on_step(&log, model) == Control::Stop;
        if step % cfg.checkpoint_every == 0 || step == cfg.max_updates || stop {
            let dev_loss = st_dev_loss(model, dev, cfg.loss.label_smoothing, 32)?;
            outcome.checkpoints.push(ModelCheckpoint::capture(model, step, dev_loss));
        }
        if stop {
            break;
        }
    }
    Ok(outcome)
}

/// Human-readable one-line summary of a log entry.
pub fn describe(log: &StepLog) -> String {
    let r = &log.report;
    alloc::format!(
        "step {} lr {:.3e} loss {:.5} (st {:.5} mt {:.5} ctr {:.5}) |g| {:.4}",
        log.step,
        log.lr,
        r.total,
        r.st,
        r.mt,
        r.ctr,
        log.grad_norm
    )
}
