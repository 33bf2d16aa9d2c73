//! Shared semantic memory speech/text translation: a small reverse-mode
//! tensor engine, the encoder / fixed-length projection / decoder model,
//! its training objectives, synthetic corpora and the training loop.
//!
//! The crate is `no_std` (with `alloc`); file formats and the command line
//! live in the companion `chimera` crate.

#![cfg_attr(not(any(test, feature = "std")), no_std)]

extern crate alloc;

pub mod tensor;
pub mod train;
pub mod analysis;
pub mod corpus;
pub mod error;
pub mod model;
pub mod nn;
pub mod objectives;

pub use error::{Error, Result};
