use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::model::{Chimera, ModelConfig};
use crate::tensor::Tensor;

/// Snapshot of every parameter in canonical order plus training metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelCheckpoint {
    pub config: ModelConfig,
    pub params: Vec<(String, Tensor)>,
    pub step: u64,
    pub dev_loss: f64,
}

impl ModelCheckpoint {
    pub fn capture(model: &Chimera, step: u64, dev_loss: f64) -> Self {
        Self {
            config: model.config().clone(),
            params: model.named_params().into_iter().map(|(n, t)| (n.to_string(), t.clone())).collect(),
            step,
            dev_loss,
        }
    }

    /// Builds the architecture from the stored config and loads the values.
    pub fn restore(&self) -> Result<Chimera> {
        let mut model = Chimera::new(self.config.clone(), 0)?;
        self.apply_to(&mut model)?;
        Ok(model)
    }

    /// Loads the values into an existing model; names and shapes must match.
    pub fn apply_to(&self, model: &mut Chimera) -> Result<()> {
        model.load_params(self.params.iter().map(|(n, t)| (n.as_str(), t)))
    }
}

/// Parameter-wise arithmetic mean; metadata comes from the middle checkpoint.
pub fn average_checkpoints(checkpoints: &[ModelCheckpoint]) -> Result<ModelCheckpoint> {
    let Some(first) = checkpoints.first() else {
        return Err(Error::Empty("checkpoint list"));
    };
    for c in checkpoints {
        let same = c.params.len() == first.params.len()
            && c.params.iter().zip(&first.params).all(|((a, ta), (b, tb))| a == b && ta.shape() == tb.shape());
        if !same {
            return Err(Error::Mismatch(alloc::format!(
                "checkpoint at step {} has a different parameter set than step {}",
                c.step,
                first.step
            )));
        }
    }
    let mut params = first.params.clone();
    // running mean keeps identical inputs bitwise identical
    for (k, c) in checkpoints.iter().enumerate().skip(1) {
        let weight = 1.0 / (k + 1) as f64;
        for ((_, acc), (_, t)) in params.iter_mut().zip(&c.params) {
            for (a, v) in acc.data_mut().iter_mut().zip(t.data()) {
                let delta = v - *a;
                if delta != 0.0 {
                    *a += delta * weight;
                }
            }
        }
    }
    let centre = &checkpoints[checkpoints.len() / 2];
    Ok(ModelCheckpoint { config: centre.config.clone(), params, step: centre.step, dev_loss: centre.dev_loss })
}

/// Up to `size` consecutive checkpoints centred on the lowest dev loss and
/// shifted inward at either end of the series.
pub fn best_window(checkpoints: &[ModelCheckpoint], size: usize) -> &[ModelCheckpoint] {
    if checkpoints.is_empty() || size == 0 {
        return &[];
    }
    let best = (0..checkpoints.len())
        .min_by(|&a, &b| checkpoints[a].dev_loss.total_cmp(&checkpoints[b].dev_loss))
        .expect("nonempty");
    let size = size.min(checkpoints.len());
    let start = best.saturating_sub(size / 2).min(checkpoints.len() - size);
    &checkpoints[start..start + size]
}
