//! Binary container shared by recordings, datasets and checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic        8 bytes
//! version      u32
//! header_len   u64
//! header       header_len bytes of UTF-8 JSON
//! value_count  u64
//! values       value_count × f64
//! ```

use std::io::Write;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

pub const VERSION: u32 = 1;

pub const RECORDING_MAGIC: &[u8; 8] = b"PGCNRAW1";
pub const DATASET_MAGIC: &[u8; 8] = b"PGCNDSET";
pub const CHECKPOINT_MAGIC: &[u8; 8] = b"PGCNCKPT";

pub fn encode<H: Serialize>(magic: &[u8; 8], header: &H, values: &[f64]) -> Result<Vec<u8>> {
    let json = serde_json::to_vec(header)?;
    let mut out = Vec::with_capacity(28 + json.len() + 8 * values.len());
    out.extend_from_slice(magic);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&(values.len() as u64).to_le_bytes());
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode<H: DeserializeOwned>(magic: &[u8; 8], bytes: &[u8]) -> Result<(H, Vec<f64>)> {
    let mut cur = Cursor { bytes, pos: 0 };
    if cur.take(8)? != magic {
        return Err(Error::Format(format!(
            "bad magic bytes, expected {:?}",
            String::from_utf8_lossy(magic)
        )));
    }
    let version = u32::from_le_bytes(cur.take(4)?.try_into().unwrap());
    if version != VERSION {
        return Err(Error::Format(format!(
            "unsupported version {version}, expected {VERSION}"
        )));
    }
    let header_len = cur.u64()? as usize;
    let header = serde_json::from_slice(cur.take(header_len)?)
        .map_err(|e| Error::Format(format!("header: {e}")))?;
    let count = cur.u64()? as usize;
    let raw = cur.take(count.checked_mul(8).ok_or_else(|| Error::Format("value count overflow".into()))?)?;
    if cur.pos != bytes.len() {
        return Err(Error::Format(format!("{} trailing bytes", bytes.len() - cur.pos)));
    }
    let values = raw
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((header, values))
}

pub fn write_file<H: Serialize>(
    path: impl AsRef<Path>,
    magic: &[u8; 8],
    header: &H,
    values: &[f64],
) -> Result<()> {
    let bytes = encode(magic, header, values)?;
    let mut f = std::fs::File::create(path)?;
    f.write_all(&bytes)?;
    Ok(())
}

pub fn read_file<H: DeserializeOwned>(path: impl AsRef<Path>, magic: &[u8; 8]) -> Result<(H, Vec<f64>)> {
    decode(magic, &std::fs::read(path)?)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, len: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(len)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Format("truncated file".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}
