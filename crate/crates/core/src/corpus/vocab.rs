use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use super::TokenSequence;
use crate::error::{Error, Result};

pub const PAD: u32 = 0;
pub const BOS: u32 = 1;
pub const EOS: u32 = 2;
pub const UNK: u32 = 3;

const RESERVED: [&str; 4] = ["<pad>", "<s>", "</s>", "<unk>"];

/// Whitespace tokenizer backed by a bijective token ↔ id map. One
/// vocabulary is shared by source and target text of both tasks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    ids: BTreeMap<String, u32>,
}

impl Vocabulary {
    /// Reserved entries followed by `words` in order; duplicates are rejected.
    pub fn new<S: AsRef<str>>(words: impl IntoIterator<Item = S>) -> Result<Self> {
        let mut v = Self { tokens: Vec::new(), ids: BTreeMap::new() };
        for w in RESERVED.iter().map(|s| s.to_string()).chain(words.into_iter().map(|w| w.as_ref().to_string())) {
            if w.is_empty() || w.chars().any(char::is_whitespace) {
                return Err(Error::Config(alloc::format!("invalid vocabulary entry {w:?}")));
            }
            if v.ids.contains_key(&w) {
                return Err(Error::Config(alloc::format!("duplicate vocabulary entry {w:?}")));
            }
            v.ids.insert(w.clone(), v.tokens.len() as u32);
            v.tokens.push(w);
        }
        Ok(v)
    }

    /// `size - 4` synthetic content words `w0`, `w1`, ...
    pub fn synthetic(size: usize) -> Result<Self> {
        if size <= RESERVED.len() {
            return Err(Error::Config(alloc::format!("vocabulary size {size} leaves no content tokens")));
        }
        Self::new((0..size - RESERVED.len()).map(|i| alloc::format!("w{i}")))
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.ids.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    /// Entries after the reserved ones, in id order.
    pub fn content_tokens(&self) -> &[String] {
        &self.tokens[RESERVED.len()..]
    }

    /// Splits on whitespace; unknown words map to UNK.
    pub fn encode(&self, text: &str) -> Result<TokenSequence> {
        TokenSequence::new(text.split_whitespace().map(|w| self.id(w).unwrap_or(UNK)).collect())
    }

    /// Joins tokens with single spaces, dropping PAD/BOS/EOS.
    pub fn decode(&self, ids: &[u32]) -> Result<String> {
        let mut out = String::new();
        for &id in ids {
            if id == PAD || id == BOS || id == EOS {
                continue;
            }
            let tok = self.token(id).ok_or(Error::Vocabulary { id, size: self.len() })?;
            if !out.is_empty() {
                out.push(' ');
            }
            out.push_str(tok);
        }
        Ok(out)
    }
}
