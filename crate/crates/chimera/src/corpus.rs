//! Line-delimited corpus files.
//!
//! An ST triplet line has three tab-separated fields: a frame reference
//! `<sidecar file>#<utterance index>`, the transcript and the translation.
//! An MT pair line has two: source and target. Text fields are
//! whitespace-tokenized sentences and may not contain tabs.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use chimera_core::corpus::{FrameSequence, MtPair, StTriplet, TokenSequence, Vocabulary};

use crate::error::{invalid, io_err, FormatError, Result};
use crate::frames::{read_frames, write_frames};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrameRef {
    /// Sidecar path, relative to the corpus file's directory.
    pub file: String,
    pub index: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Record {
    St { frames: FrameRef, transcript: String, translation: String },
    Mt { source: String, target: String },
}

fn check_field(path: &Path, field: &str, what: &str) -> Result<()> {
    if field.trim().is_empty() {
        return Err(invalid(path, format!("empty {what}")));
    }
    if field.contains(['\t', '\n', '\r']) {
        return Err(invalid(path, format!("{what} {field:?} contains a tab or line break")));
    }
    Ok(())
}

pub fn parse_corpus(path: &Path, text: &str) -> Result<Vec<Record>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let err = |message: String| FormatError::Parse { path: path.to_path_buf(), line: line_no, message };
        let fields: Vec<&str> = line.split('\t').collect();
        if let Some(k) = fields.iter().position(|f| f.trim().is_empty()) {
            return Err(err(format!("field {} is empty", k + 1)));
        }
        let record = match fields.as_slice() {
            [source, target] => Record::Mt { source: source.to_string(), target: target.to_string() },
            [frames, transcript, translation] => {
                let (file, index) = frames
                    .rsplit_once('#')
                    .ok_or_else(|| err(format!("frame reference {frames:?} lacks '#<index>'")))?;
                let index = index.parse().map_err(|_| err(format!("bad utterance index {index:?}")))?;
                if file.is_empty() {
                    return Err(err("frame reference has no file".into()));
                }
                Record::St {
                    frames: FrameRef { file: file.to_string(), index },
                    transcript: transcript.to_string(),
                    translation: translation.to_string(),
                }
            }
            _ => return Err(err(format!("expected 2 (MT) or 3 (ST) tab-separated fields, found {}", fields.len()))),
        };
        out.push(record);
    }
    Ok(out)
}

pub fn format_corpus(path: &Path, records: &[Record]) -> Result<String> {
    let mut out = String::new();
    for r in records {
        match r {
            Record::St { frames, transcript, translation } => {
                check_field(path, &frames.file, "frame file")?;
                if frames.file.contains('#') {
                    return Err(invalid(path, format!("frame file {:?} contains '#'", frames.file)));
                }
                check_field(path, transcript, "transcript")?;
                check_field(path, translation, "translation")?;
                out.push_str(&format!("{}#{}\t{transcript}\t{translation}\n", frames.file, frames.index));
            }
            Record::Mt { source, target } => {
                check_field(path, source, "source")?;
                check_field(path, target, "target")?;
                out.push_str(&format!("{source}\t{target}\n"));
            }
        }
    }
    Ok(out)
}

pub fn read_corpus(path: &Path) -> Result<Vec<Record>> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    parse_corpus(path, &text)
}

pub fn write_corpus(path: &Path, records: &[Record]) -> Result<()> {
    let text = format_corpus(path, records)?;
    fs::write(path, text).map_err(io_err(path))
}

/// Content tokens, one per line; reserved entries are implied.
pub fn write_vocab(path: &Path, vocab: &Vocabulary) -> Result<()> {
    let mut text = vocab.content_tokens().join("\n");
    text.push('\n');
    fs::write(path, text).map_err(io_err(path))
}

pub fn read_vocab(path: &Path) -> Result<Vocabulary> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    Vocabulary::new(text.lines()).map_err(|e| invalid(path, e.to_string()))
}

/// Tokenized corpus contents with frame references resolved.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Loaded {
    pub triplets: Vec<StTriplet>,
    pub mt_pairs: Vec<MtPair>,
}

fn tokens(path: &Path, line: usize, vocab: &Vocabulary, text: &str) -> Result<TokenSequence> {
    vocab.encode(text).map_err(|e| FormatError::Parse { path: path.to_path_buf(), line, message: e.to_string() })
}

/// Reads a corpus and tokenizes it. Sidecars are loaded once each.
pub fn load_corpus(path: &Path, vocab: &Vocabulary) -> Result<Loaded> {
    let records = read_corpus(path)?;
    let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let mut sidecars: HashMap<String, Vec<FrameSequence>> = HashMap::new();
    let mut out = Loaded::default();
    for (i, r) in records.into_iter().enumerate() {
        let line = i + 1;
        match r {
            Record::Mt { source, target } => out.mt_pairs.push(MtPair {
                source: tokens(path, line, vocab, &source)?,
                target: tokens(path, line, vocab, &target)?,
            }),
            Record::St { frames, transcript, translation } => {
                if !sidecars.contains_key(&frames.file) {
                    sidecars.insert(frames.file.clone(), read_frames(&dir.join(&frames.file))?);
                }
                let utterances = &sidecars[&frames.file];
                let speech = utterances.get(frames.index).cloned().ok_or_else(|| FormatError::Parse {
                    path: path.to_path_buf(),
                    line,
                    message: format!("{} holds {} utterances, no index {}", frames.file, utterances.len(), frames.index),
                })?;
                out.triplets.push(StTriplet {
                    speech,
                    transcript: tokens(path, line, vocab, &transcript)?,
                    translation: tokens(path, line, vocab, &translation)?,
                });
            }
        }
    }
    Ok(out)
}

fn text(path: &Path, vocab: &Vocabulary, t: &TokenSequence) -> Result<String> {
    vocab.decode(t.ids()).map_err(|e| invalid(path, e.to_string()))
}

/// Writes `<dir>/<name>.tsv` and, for triplets, the `<name>.chfr` sidecar.
pub fn save_corpus(dir: &Path, name: &str, vocab: &Vocabulary, triplets: &[StTriplet], mt_pairs: &[MtPair]) -> Result<PathBuf> {
    let path = dir.join(format!("{name}.tsv"));
    let sidecar = format!("{name}.chfr");
    let mut records = Vec::with_capacity(triplets.len() + mt_pairs.len());
    for (index, t) in triplets.iter().enumerate() {
        records.push(Record::St {
            frames: FrameRef { file: sidecar.clone(), index },
            transcript: text(&path, vocab, &t.transcript)?,
            translation: text(&path, vocab, &t.translation)?,
        });
    }
    for p in mt_pairs {
        records.push(Record::Mt { source: text(&path, vocab, &p.source)?, target: text(&path, vocab, &p.target)? });
    }
    if !triplets.is_empty() {
        let frames: Vec<FrameSequence> = triplets.iter().map(|t| t.speech.clone()).collect();
        write_frames(&dir.join(&sidecar), &frames)?;
    }
    write_corpus(&path, &records)?;
    Ok(path)
}
