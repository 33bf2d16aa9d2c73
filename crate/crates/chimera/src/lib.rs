//! File formats, checkpoint IO and the command-line driver around
//! `chimera-core`.

mod bytes;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod corpus;
pub mod error;
pub mod frames;
pub mod table;

pub use error::{FormatError, Result};
