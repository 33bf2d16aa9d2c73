use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::bleu::bleu;
use super::metrics::{teacher_forced_accuracy, translate_greedy};
use crate::corpus::{MtPair, StTriplet};
use crate::error::Result;
use crate::model::{Chimera, ModelConfig, Source};
use crate::train::{finetune_multitask, pretrain_mt, Control, FreezeFlags, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AblationSuite {
    /// Frozen projection and/or decoder during fine-tuning.
    Freezing,
    /// Fine-tuning with and without the MT and contrastive terms.
    Multitask,
    /// Fraction of the external MT corpus available.
    MtScaling,
}

/// Everything one ablation grid needs. Every cell starts from a model built
/// with `model_seed` and is trained with the given seeded configurations.
#[derive(Debug, Clone)]
pub struct AblationSetup<'a> {
    pub model: ModelConfig,
    pub model_seed: u64,
    pub pretrain: TrainConfig,
    pub finetune: TrainConfig,
    pub train: &'a [StTriplet],
    pub external: &'a [MtPair],
    pub test: &'a [StTriplet],
    pub max_len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub suite: AblationSuite,
    pub label: String,
    pub freeze_projection: bool,
    pub freeze_decoder: bool,
    pub mt: bool,
    pub contrastive: bool,
    pub mt_fraction: f64,
    /// Corpus BLEU of greedy speech translations on the test split.
    pub bleu: f64,
    /// Teacher-forced token accuracy on the test split.
    pub token_accuracy: f64,
}

pub const MT_FRACTIONS: [(u32, u32); 4] = [(0, 1), (1, 4), (1, 2), (1, 1)];

fn pretrained(setup: &AblationSetup<'_>, external: &[MtPair]) -> Result<Chimera> {
    let mut model = Chimera::new(setup.model.clone(), setup.model_seed)?;
    if !external.is_empty() && setup.pretrain.max_updates > 0 {
        pretrain_mt(&mut model, external, &[], &setup.pretrain, |_, _| Control::Continue)?;
    }
    Ok(model)
}

fn evaluate(model: &Chimera, test: &[StTriplet], max_len: usize) -> Result<(f64, f64)> {
    let sources: Vec<Source<'_>> = test.iter().map(|t| Source::Speech(&t.speech)).collect();
    let hyps = translate_greedy(model, &sources, max_len)?;
    let refs: Vec<&[u32]> = test.iter().map(|t| t.translation.ids()).collect();
    let score = bleu(&hyps, &refs, 4)?.score;
    let items: Vec<_> = test.iter().map(|t| (Source::Speech(&t.speech), &t.translation)).collect();
    Ok((score, teacher_forced_accuracy(model, &items)?))
}

fn mark(on: bool) -> &'static str {
    if on {
        "yes"
    } else {
        "no"
    }
}

/// Runs one ablation grid. Rows follow the order of the corresponding table:
/// freezing `none, projection, decoder, both`; multitask `(MT, ctr)` in
/// `(yes, yes), (yes, no), (no, yes), (no, no)`; MT fractions `0, 1/4, 1/2, 1`.
pub fn run_ablation(suite: AblationSuite, setup: &AblationSetup<'_>) -> Result<Vec<AblationRow>> {
    let base_weights = setup.finetune.weights;
    let mut cells: Vec<(String, FreezeFlags, bool, bool, (u32, u32))> = Vec::new();
    match suite {
        AblationSuite::Freezing => {
            for (projection, decoder) in [(false, false), (true, false), (false, true), (true, true)] {
                let label = alloc::format!("projection={} decoder={}", if projection { "fixed" } else { "-" }, if decoder { "fixed" } else { "-" });
                cells.push((label, FreezeFlags { projection, decoder }, base_weights.mt != 0.0, base_weights.ctr != 0.0, (1, 1)));
            }
        }
        AblationSuite::Multitask => {
            for (mt, ctr) in [(true, true), (true, false), (false, true), (false, false)] {
                cells.push((alloc::format!("mt={} ctr={}", mark(mt), mark(ctr)), setup.finetune.freeze, mt, ctr, (1, 1)));
            }
        }
        AblationSuite::MtScaling => {
            for (num, den) in MT_FRACTIONS {
                let label = alloc::format!("mt_fraction={num}/{den}");
                cells.push((label, setup.finetune.freeze, base_weights.mt != 0.0, base_weights.ctr != 0.0, (num, den)));
            }
        }
    }
    let shared = match suite {
        AblationSuite::MtScaling => None,
        _ => Some(pretrained(setup, setup.external)?),
    };
    let mut rows = Vec::with_capacity(cells.len());
    for (label, freeze, mt, ctr, (num, den)) in cells {
        let n_external = setup.external.len() * num as usize / den as usize;
        let external = &setup.external[..n_external];
        let mut model = match &shared {
            Some(m) => m.clone(),
            None => pretrained(setup, external)?,
        };
        let mut cfg = setup.finetune.clone();
        cfg.freeze = freeze;
        cfg.weights.mt = if mt { if base_weights.mt != 0.0 { base_weights.mt } else { 1.0 } } else { 0.0 };
        cfg.weights.ctr = if ctr { if base_weights.ctr != 0.0 { base_weights.ctr } else { 1.0 } } else { 0.0 };
        finetune_multitask(&mut model, setup.train, external, &[], &cfg, |_, _| Control::Continue)?;
        let (bleu, token_accuracy) = evaluate(&model, setup.test, setup.max_len)?;
        rows.push(AblationRow {
            suite,
            label,
            freeze_projection: freeze.projection,
            freeze_decoder: freeze.decoder,
            mt,
            contrastive: ctr,
            mt_fraction: num as f64 / den as f64,
            bleu,
            token_accuracy,
        });
    }
    Ok(rows)
}
