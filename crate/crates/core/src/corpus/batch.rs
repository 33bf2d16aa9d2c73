use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Limits on one batch: total source size (tokens or frames) and,
/// optionally, the number of sequences.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchCaps {
    pub max_size: usize,
    pub max_items: Option<usize>,
}

impl BatchCaps {
    pub fn new(max_size: usize) -> Self {
        Self { max_size, max_items: None }
    }
}

/// Sample indices of one batch with their source sizes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Batch {
    pub indices: Vec<usize>,
    pub sizes: Vec<usize>,
}

impl Batch {
    pub fn total_size(&self) -> usize {
        self.sizes.iter().sum()
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// Length-bucketed greedy packing: samples are shuffled, stably sorted by
/// size, packed in order while the cap holds, and the batch order is
/// shuffled again. Every index appears in exactly one batch.
pub fn make_batches(sizes: &[usize], caps: BatchCaps, seed: u64) -> Result<Vec<Batch>> {
    if sizes.is_empty() {
        return Err(Error::Empty("corpus"));
    }
    if caps.max_size == 0 || caps.max_items == Some(0) {
        return Err(Error::Config("batch caps must be positive".into()));
    }
    if let Some(&size) = sizes.iter().find(|&&s| s > caps.max_size) {
        return Err(Error::OversizeSample { size, cap: caps.max_size });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..sizes.len()).collect();
    order.shuffle(&mut rng);
    order.sort_by_key(|&i| sizes[i]);

    let mut batches = Vec::new();
    let mut current = Batch { indices: Vec::new(), sizes: Vec::new() };
    let mut total = 0;
    for i in order {
        let full_items = caps.max_items.is_some_and(|m| current.len() >= m);
        if !current.is_empty() && (total + sizes[i] > caps.max_size || full_items) {
            batches.push(core::mem::replace(&mut current, Batch { indices: Vec::new(), sizes: Vec::new() }));
            total = 0;
        }
        current.indices.push(i);
        current.sizes.push(sizes[i]);
        total += sizes[i];
    }
    batches.push(current);
    batches.shuffle(&mut rng);
    Ok(batches)
}
