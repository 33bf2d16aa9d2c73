//! Checkpoint files: `CHCK`, u32 version, u64 byte length + UTF-8 JSON model
//! config, u64 step, f64 dev loss, u64 parameter count, then per parameter
//! u64 name length + UTF-8 name, u32 rank, u64 dims, and the values as
//! little-endian f64.

use std::fs;
use std::path::Path;

use chimera_core::model::ModelConfig;
use chimera_core::tensor::Tensor;
use chimera_core::train::ModelCheckpoint;

use crate::bytes::{put_u32, put_u64, Reader};
use crate::error::{invalid, io_err, Result};

const MAGIC: &[u8; 4] = b"CHCK";
const VERSION: u32 = 1;

pub fn encode_checkpoint(ck: &ModelCheckpoint) -> Vec<u8> {
    let config = serde_json::to_string(&ck.config).expect("model config serializes");
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, VERSION);
    put_u64(&mut out, config.len() as u64);
    out.extend_from_slice(config.as_bytes());
    put_u64(&mut out, ck.step);
    out.extend_from_slice(&ck.dev_loss.to_le_bytes());
    put_u64(&mut out, ck.params.len() as u64);
    for (name, t) in &ck.params {
        put_u64(&mut out, name.len() as u64);
        out.extend_from_slice(name.as_bytes());
        put_u32(&mut out, t.shape().len() as u32);
        for &d in t.shape() {
            put_u64(&mut out, d as u64);
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode_checkpoint(path: &Path, bytes: &[u8]) -> Result<ModelCheckpoint> {
    let mut r = Reader::new(path, bytes);
    r.magic(MAGIC)?;
    r.version(VERSION)?;
    let n = r.usize("config length")?;
    let json = std::str::from_utf8(r.take(n, "config")?).map_err(|_| invalid(path, "config is not UTF-8"))?;
    let config: ModelConfig = serde_json::from_str(json).map_err(|e| invalid(path, format!("config: {e}")))?;
    let step = r.u64("step")?;
    let dev_loss = r.f64("dev loss")?;
    let count = r.usize("parameter count")?;
    let mut params = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let n = r.usize("name length")?;
        let name = std::str::from_utf8(r.take(n, "name")?).map_err(|_| invalid(path, "parameter name is not UTF-8"))?.to_string();
        let rank = r.u32("rank")? as usize;
        let mut shape = Vec::with_capacity(rank.min(8));
        for _ in 0..rank {
            shape.push(r.usize("dimension")?);
        }
        let numel = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).ok_or_else(|| invalid(path, format!("{name}: shape overflows")))?;
        let raw = r.take(numel.checked_mul(8).ok_or_else(|| invalid(path, "size overflow"))?, &name)?;
        let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
        let t = Tensor::new(shape, data).map_err(|e| invalid(path, format!("{name}: {e}")))?;
        params.push((name, t));
    }
    r.finish()?;
    Ok(ModelCheckpoint { config, params, step, dev_loss })
}

pub fn save_checkpoint(path: &Path, ck: &ModelCheckpoint) -> Result<()> {
    fs::write(path, encode_checkpoint(ck)).map_err(io_err(path))
}

pub fn load_checkpoint(path: &Path) -> Result<ModelCheckpoint> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    decode_checkpoint(path, &bytes)
}
