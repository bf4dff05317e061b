//! GWTC v1 container.
//!
//! ```text
//! header   "GWTC" | version: u32 = 1 | entry_count: u64          (16 bytes)
//! entry    name_len: u32 | name (UTF-8) | dtype: u8 | rank: u8
//!          | dims: rank x u32 | payload_len: u64 | payload
//! ```
//!
//! Little-endian, no padding, entries in lexicographic name order. dtype 0
//! is f32; dtype 1 is raw bytes and is used only by the `__meta__` entry,
//! which holds the generator config as JSON (rank 1, dims = [byte length]).

use std::collections::BTreeMap;
use std::path::Path;

use super::{Checkpoint, GeneratorConfig};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"GWTC";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: usize = 16;
pub const META_ENTRY: &str = "__meta__";

const DTYPE_F32: u8 = 0;
const DTYPE_RAW: u8 = 1;

pub fn to_bytes(ckpt: &Checkpoint) -> Vec<u8> {
    let meta = serde_json::to_vec(ckpt.meta()).expect("config serializes");

    let mut entries: Vec<(&str, u8, Vec<u32>, Vec<u8>)> = Vec::with_capacity(ckpt.len() + 1);
    entries.push((META_ENTRY, DTYPE_RAW, vec![meta.len() as u32], meta));
    for (name, t) in ckpt.params() {
        let dims = t.dims().iter().map(|&d| d as u32).collect();
        let payload = t.data().iter().flat_map(|x| x.to_le_bytes()).collect();
        entries.push((name, DTYPE_F32, dims, payload));
    }
    entries.sort_by(|a, b| a.0.cmp(b.0));

    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(entries.len() as u64).to_le_bytes());
    for (name, dtype, dims, payload) in entries {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(dtype);
        out.push(dims.len() as u8);
        for d in dims {
            out.extend_from_slice(&d.to_le_bytes());
        }
        out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
        out.extend_from_slice(&payload);
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Truncated(format!("{what} at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

pub fn from_bytes(buf: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader { buf, pos: 0 };
    let magic: [u8; 4] = r.take(4, "magic")?.try_into().unwrap();
    if &magic != MAGIC {
        return Err(Error::BadMagic(magic));
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let count = r.u64("entry count")?;

    let mut meta: Option<GeneratorConfig> = None;
    let mut params = BTreeMap::new();
    let mut prev: Option<String> = None;
    for _ in 0..count {
        let name_len = r.u32("name length")? as usize;
        let name = std::str::from_utf8(r.take(name_len, "name")?)
            .map_err(|_| Error::Malformed(format!("entry name at byte {} is not UTF-8", r.pos)))?
            .to_owned();
        if let Some(p) = &prev {
            if *p >= name {
                return Err(Error::Malformed(format!(
                    "entry `{name}` out of order or duplicated after `{p}`"
                )));
            }
        }
        let dtype = r.u8("dtype")?;
        let rank = r.u8("rank")? as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(r.u32("dims")? as usize);
        }
        let payload_len = r.u64("payload length")?;
        let payload_len = usize::try_from(payload_len)
            .map_err(|_| Error::Truncated(format!("payload of `{name}`")))?;
        let payload = r.take(payload_len, "payload")?;

        match (name.as_str(), dtype) {
            (META_ENTRY, DTYPE_RAW) => {
                if dims != [payload.len()] {
                    return Err(Error::Malformed(format!(
                        "meta dims {dims:?} disagree with payload length {}",
                        payload.len()
                    )));
                }
                let cfg: GeneratorConfig = serde_json::from_slice(payload)
                    .map_err(|e| Error::Malformed(format!("meta JSON: {e}")))?;
                meta = Some(cfg);
            }
            (META_ENTRY, _) | (_, DTYPE_RAW) => {
                return Err(Error::Malformed(format!("entry `{name}` has wrong dtype {dtype}")));
            }
            (_, DTYPE_F32) => {
                let numel: usize = dims.iter().product();
                if payload.len() != numel * 4 {
                    return Err(Error::Malformed(format!(
                        "`{name}`: dims {dims:?} need {} payload bytes, found {}",
                        numel * 4,
                        payload.len()
                    )));
                }
                let data = payload
                    .chunks_exact(4)
                    .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
                    .collect();
                let t = Tensor::new(dims, data).map_err(|e| Error::Malformed(format!("`{name}`: {e}")))?;
                params.insert(name.clone(), t);
            }
            (_, other) => {
                return Err(Error::Malformed(format!("entry `{name}` has unknown dtype {other}")));
            }
        }
        prev = Some(name);
    }
    if r.pos != buf.len() {
        return Err(Error::Malformed(format!(
            "{} trailing bytes after last entry",
            buf.len() - r.pos
        )));
    }
    let meta = meta.ok_or_else(|| Error::manifest(META_ENTRY, "missing config entry"))?;
    Checkpoint::new(meta, params)
}

pub fn save(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, to_bytes(ckpt)).map_err(|e| Error::io(path, e))
}

pub fn load(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}
