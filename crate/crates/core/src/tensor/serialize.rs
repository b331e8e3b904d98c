//! Named-tensor container, the on-disk format for checkpoints and any
//! other parameter blobs.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic   8 bytes  "SLDSNT01"
//! count   u32      number of tensors
//! entry*  u32 name_len, name (UTF-8)
//!         u32 ndim, ndim x u64 dims
//!         u64 offset            element offset into the payload
//! meta    u32 len, UTF-8 bytes  "key=value" lines
//! payload count x f64           little-endian, concatenated
//! ```
//!
//! Values round-trip bit-exactly (NaN payloads included) because floats
//! are moved as raw bit patterns.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use super::Array;
use crate::error::{Result, SldsError};

const MAGIC: &[u8; 8] = b"SLDSNT01";

#[derive(Debug, Clone, Default)]
pub struct NamedTensors {
    pub tensors: BTreeMap<String, Array>,
    pub meta: BTreeMap<String, String>,
}

impl NamedTensors {
    pub fn new() -> Self {
        Self::default()
    }
}

pub fn write_named_tensors(path: &Path, nt: &NamedTensors) -> Result<()> {
    let mut header = Vec::new();
    header.extend_from_slice(MAGIC);
    header.extend_from_slice(&(nt.tensors.len() as u32).to_le_bytes());
    let mut offset: u64 = 0;
    for (name, arr) in &nt.tensors {
        header.extend_from_slice(&(name.len() as u32).to_le_bytes());
        header.extend_from_slice(name.as_bytes());
        header.extend_from_slice(&(arr.shape.len() as u32).to_le_bytes());
        for &d in &arr.shape {
            header.extend_from_slice(&(d as u64).to_le_bytes());
        }
        header.extend_from_slice(&offset.to_le_bytes());
        offset += arr.numel() as u64;
    }
    let mut meta = String::new();
    for (k, v) in &nt.meta {
        assert!(
            !k.contains('=') && !k.contains('\n') && !v.contains('\n'),
            "meta key/value must be newline-free and keys '='-free: {k}"
        );
        meta.push_str(k);
        meta.push('=');
        meta.push_str(v);
        meta.push('\n');
    }
    header.extend_from_slice(&(meta.len() as u32).to_le_bytes());
    header.extend_from_slice(meta.as_bytes());

    let mut payload = Vec::with_capacity(offset as usize * 8);
    for arr in nt.tensors.values() {
        for &x in &arr.data {
            payload.extend_from_slice(&x.to_le_bytes());
        }
    }

    let io = |e| SldsError::io(path, e);
    let mut f = std::fs::File::create(path).map_err(io)?;
    f.write_all(&header).map_err(io)?;
    f.write_all(&payload).map_err(io)?;
    Ok(())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(SldsError::Checkpoint {
                path: self.path.to_path_buf(),
                msg: format!("truncated at byte {}", self.pos),
            });
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

pub fn read_named_tensors(path: &Path) -> Result<NamedTensors> {
    let mut buf = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut buf))
        .map_err(|e| SldsError::io(path, e))?;
    let mut r = Reader { buf: &buf, pos: 0, path };
    let bad = |msg: String| SldsError::Checkpoint {
        path: path.to_path_buf(),
        msg,
    };

    if r.take(8)? != MAGIC {
        return Err(bad("bad magic; not a named-tensor file".into()));
    }
    let count = r.u32()? as usize;
    let mut entries = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| bad("tensor name is not UTF-8".into()))?
            .to_string();
        let ndim = r.u32()? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(r.u64()? as usize);
        }
        let offset = r.u64()? as usize;
        entries.push((name, shape, offset));
    }
    let meta_len = r.u32()? as usize;
    let meta_str = std::str::from_utf8(r.take(meta_len)?)
        .map_err(|_| bad("meta block is not UTF-8".into()))?
        .to_string();
    let payload = &buf[r.pos..];
    if payload.len() % 8 != 0 {
        return Err(bad("payload length is not a multiple of 8".into()));
    }
    let n_elems = payload.len() / 8;

    let mut tensors = BTreeMap::new();
    for (name, shape, offset) in entries {
        let numel: usize = shape.iter().product();
        if offset + numel > n_elems {
            return Err(bad(format!("tensor `{name}` overruns payload")));
        }
        let mut data = Vec::with_capacity(numel);
        for i in 0..numel {
            let at = (offset + i) * 8;
            data.push(f64::from_le_bytes(payload[at..at + 8].try_into().unwrap()));
        }
        if tensors.insert(name.clone(), Array::new(shape, data)).is_some() {
            return Err(bad(format!("duplicate tensor `{name}`")));
        }
    }

    let mut meta = BTreeMap::new();
    for line in meta_str.lines() {
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| bad(format!("meta line without '=': {line}")))?;
        meta.insert(k.to_string(), v.to_string());
    }
    Ok(NamedTensors { tensors, meta })
}
