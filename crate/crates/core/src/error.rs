use alloc::string::String;

use crate::tensor::TensorError;

/// Errors surfaced by the model, objectives, corpus utilities and trainer.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("token id {id} is outside the vocabulary of size {size}")]
    Vocabulary { id: u32, size: usize },
    #[error("sequence length {len} exceeds the maximum of {max} positions")]
    Length { len: usize, max: usize },
    #[error("speech input of {len} frames is shorter than the encoder receptive field")]
    InputTooShort { len: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("sample of size {size} exceeds the batch cap of {cap}")]
    OversizeSample { size: usize, cap: usize },
    #[error("{0}")]
    Mismatch(String),
    #[error("training diverged at update {step}: {detail}")]
    Diverged { step: u64, detail: String },
}

pub type Result<T, E = Error> = core::result::Result<T, E>;
