//! GCKP checkpoints: a flat list of named `f32` tensors.
//!
//! Layout (little-endian): magic `GCKP`, version `u8` = 1, entry count `u32`;
//! then per entry a `u16` name length, the UTF-8 name, rank `u8`, `rank` dims as
//! `u32`, and the row-major `f32` payload.

use std::collections::HashSet;
use std::path::Path;

use geogan_core::NdArray;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"GCKP";
pub const VERSION: u8 = 1;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub entries: Vec<(String, NdArray<f32>)>,
}

impl Checkpoint {
    pub fn get(&self, name: &str) -> Option<&NdArray<f32>> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, a)| a)
    }

    pub fn push(&mut self, name: impl Into<String>, array: NdArray<f32>) {
        self.entries.push((name.into(), array));
    }
}

fn format_err(offset: usize, detail: impl Into<String>) -> Error {
    Error::Format {
        what: "GCKP",
        offset: offset as u64,
        detail: detail.into(),
    }
}

pub fn encode(ckpt: &Checkpoint) -> Result<Vec<u8>> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.extend_from_slice(&(ckpt.entries.len() as u32).to_le_bytes());
    for (name, a) in &ckpt.entries {
        if !seen.insert(name.as_str()) {
            return Err(format_err(
                out.len(),
                format!("duplicate tensor name {name:?}"),
            ));
        }
        if name.len() > u16::MAX as usize || a.shape.len() > u8::MAX as usize {
            return Err(format_err(
                out.len(),
                format!("tensor {name:?} has an oversized name or rank"),
            ));
        }
        if a.shape.iter().product::<usize>() != a.data.len() {
            return Err(format_err(
                out.len(),
                format!(
                    "tensor {name:?}: shape {:?} does not match {} values",
                    a.shape,
                    a.data.len()
                ),
            ));
        }
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(a.shape.len() as u8);
        for &d in &a.shape {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in &a.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(format_err(
                self.bytes.len(),
                format!("truncated while reading {what}"),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(
            self.take(2, what)?.try_into().expect("2 bytes"),
        ))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4, what)?.try_into().expect("4 bytes"),
        ))
    }
}

pub fn decode(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(format_err(0, "bad magic"));
    }
    let version = r.u8("version")?;
    if version != VERSION {
        return Err(format_err(4, format!("unsupported version {version}")));
    }
    let count = r.u32("entry count")?;
    let mut seen = HashSet::new();
    let mut ckpt = Checkpoint::default();
    for _ in 0..count {
        let at = r.pos;
        let len = r.u16("name length")? as usize;
        let name = std::str::from_utf8(r.take(len, "name")?)
            .map_err(|e| format_err(at + 2, format!("name is not UTF-8: {e}")))?
            .to_owned();
        if !seen.insert(name.clone()) {
            return Err(format_err(at, format!("duplicate tensor name {name:?}")));
        }
        let rank = r.u8("rank")? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32("dimension")? as usize);
        }
        let n = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .filter(|n| n.checked_mul(4).is_some_and(|b| b <= bytes.len()))
            .ok_or_else(|| {
                format_err(
                    r.pos,
                    format!("tensor {name:?} shape {shape:?} exceeds the file"),
                )
            })?;
        let payload = r.take(4 * n, "payload")?;
        let data = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        ckpt.entries.push((name, NdArray { shape, data }));
    }
    if r.pos != bytes.len() {
        return Err(format_err(r.pos, "trailing bytes after last entry"));
    }
    Ok(ckpt)
}

pub fn read(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

pub fn write(path: impl AsRef<Path>, ckpt: &Checkpoint) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode(ckpt)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}
