//! Versioned binary checkpoints.
//!
//! Layout (little-endian):
//!
//! ```text
//! b"DACRCKPT" | u32 version | u32 header_len | header (key=value lines)
//! u32 tensor_count | per tensor: u32 name_len | name | u32 rank | u64 dims.. | f64 data..
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::dataset::parse_key_values;
use crate::error::{DacrError, Result};
use crate::nn::ParamStore;
use crate::tensor::Tensor;

const MAGIC: &[u8; 8] = b"DACRCKPT";
pub const VERSION: u32 = 1;

pub type Header = BTreeMap<String, String>;

pub fn encode(header: &Header, store: &ParamStore) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    let text: String = header.iter().map(|(k, v)| format!("{k}={v}\n")).collect();
    out.extend_from_slice(&(text.len() as u32).to_le_bytes());
    out.extend_from_slice(text.as_bytes());
    out.extend_from_slice(&(store.len() as u32).to_le_bytes());
    for (name, t) in store.iter() {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(DacrError::Format("truncated checkpoint".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn decode(bytes: &[u8]) -> Result<(Header, ParamStore)> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(DacrError::Format("not a dacr checkpoint".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(DacrError::Format(format!("unsupported checkpoint version {version}")));
    }
    let hlen = r.u32()? as usize;
    let text = std::str::from_utf8(r.take(hlen)?)
        .map_err(|_| DacrError::Format("checkpoint header is not UTF-8".into()))?;
    let header = parse_key_values(text)?;
    let count = r.u32()? as usize;
    let mut store = ParamStore::new();
    for _ in 0..count {
        let nlen = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(nlen)?)
            .map_err(|_| DacrError::Format("tensor name is not UTF-8".into()))?
            .to_string();
        let rank = r.u32()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u64()? as usize);
        }
        let n: usize = shape.iter().product();
        let raw = r.take(n * 8)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        store.add(name, Tensor::new(&shape, data));
    }
    if r.pos != bytes.len() {
        return Err(DacrError::Format("trailing bytes after checkpoint".into()));
    }
    Ok((header, store))
}

pub fn save(path: &Path, header: &Header, store: &ParamStore) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(|e| DacrError::io(dir, e))?;
        }
    }
    fs::write(path, encode(header, store)).map_err(|e| DacrError::io(path, e))
}

pub fn load(path: &Path) -> Result<(Header, ParamStore)> {
    let bytes = fs::read(path).map_err(|e| DacrError::io(path, e))?;
    decode(&bytes)
}

/// Typed lookup of a header entry.
pub fn header_value<T: std::str::FromStr>(header: &Header, key: &str) -> Result<T> {
    header
        .get(key)
        .ok_or_else(|| DacrError::Format(format!("checkpoint header missing {key}")))?
        .parse()
        .map_err(|_| DacrError::Format(format!("checkpoint header {key} is malformed")))
}

/// Fail unless the header names the expected model kind.
pub fn expect_kind(header: &Header, kind: &str) -> Result<()> {
    match header.get("kind") {
        Some(k) if k == kind => Ok(()),
        other => Err(DacrError::Format(format!(
            "expected a {kind} checkpoint, found {:?}",
            other
        ))),
    }
}
