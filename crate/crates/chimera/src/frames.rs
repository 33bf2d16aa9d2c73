//! Frame sidecar files: `CHFR`, u32 version, u32 frame dim, u64 count, then
//! `count` (u64 first frame, u64 length) index entries, then every frame as
//! little-endian f32. Utterances are stored contiguously in index order.

use std::fs;
use std::path::Path;

use chimera_core::corpus::FrameSequence;

use crate::bytes::{put_u32, put_u64, Reader};
use crate::error::{invalid, io_err, Result};

const MAGIC: &[u8; 4] = b"CHFR";
const VERSION: u32 = 1;

pub fn encode_frames(utterances: &[FrameSequence]) -> Vec<u8> {
    let dim = utterances.first().map_or(0, |u| u.dim());
    let total: usize = utterances.iter().map(|u| u.data().len()).sum();
    let mut out = Vec::with_capacity(20 + 16 * utterances.len() + 4 * total);
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, VERSION);
    put_u32(&mut out, dim as u32);
    put_u64(&mut out, utterances.len() as u64);
    let mut start = 0u64;
    for u in utterances {
        put_u64(&mut out, start);
        put_u64(&mut out, u.len() as u64);
        start += u.len() as u64;
    }
    for u in utterances {
        for v in u.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode_frames(path: &Path, bytes: &[u8]) -> Result<Vec<FrameSequence>> {
    let mut r = Reader::new(path, bytes);
    r.magic(MAGIC)?;
    r.version(VERSION)?;
    let dim = r.u32("frame dim")? as usize;
    let count = r.usize("utterance count")?;
    let mut index = Vec::with_capacity(count.min(1 << 20));
    let mut expected = 0usize;
    for i in 0..count {
        let (start, len) = (r.usize("index start")?, r.usize("index length")?);
        if start != expected {
            return Err(invalid(path, format!("utterance {i} starts at frame {start}, expected {expected}")));
        }
        expected += len;
        index.push(len);
    }
    let mut out = Vec::with_capacity(index.len());
    for (i, len) in index.into_iter().enumerate() {
        let raw = r.take(len * dim * 4, "frame data")?;
        let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
        out.push(FrameSequence::new(len, dim, data).map_err(|e| invalid(path, format!("utterance {i}: {e}")))?);
    }
    r.finish()?;
    Ok(out)
}

pub fn write_frames(path: &Path, utterances: &[FrameSequence]) -> Result<()> {
    if let Some(u) = utterances.iter().find(|u| u.dim() != utterances[0].dim()) {
        return Err(invalid(path, format!("frame dims {} and {} differ", utterances[0].dim(), u.dim())));
    }
    fs::write(path, encode_frames(utterances)).map_err(io_err(path))
}

pub fn read_frames(path: &Path) -> Result<Vec<FrameSequence>> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    decode_frames(path, &bytes)
}
