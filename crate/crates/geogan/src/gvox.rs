//! GVOX volumes: a 20-byte little-endian header followed by the raw voxels,
//! x fastest.
//!
//! | bytes | field                                  |
//! |-------|----------------------------------------|
//! | 0..4  | magic `GVOX`                           |
//! | 4     | version, 1                             |
//! | 5     | dtype: 0 binary `u8`, 1 gray `f32`     |
//! | 6..8  | reserved, 0                            |
//! | 8..20 | `nx`, `ny`, `nz` as `u32`              |

use std::path::Path;

use geogan_core::{DType, Volume, VolumeData};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"GVOX";
pub const VERSION: u8 = 1;
pub const HEADER_LEN: usize = 20;
pub const MAX_DIM: usize = 4096;

fn format_err(offset: usize, detail: impl Into<String>) -> Error {
    Error::Format {
        what: "GVOX",
        offset: offset as u64,
        detail: detail.into(),
    }
}

/// Serialises `v`; gray values outside `[0, 1]` are clamped. Returns the bytes
/// and the number of clamped voxels.
pub fn encode(v: &Volume) -> (Vec<u8>, usize) {
    let [nx, ny, nz] = v.dims();
    let mut out = Vec::with_capacity(HEADER_LEN + v.len() * 4);
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.push(match v.dtype() {
        DType::BinaryU8 => 0,
        DType::GrayF32 => 1,
    });
    out.extend_from_slice(&0u16.to_le_bytes());
    for d in [nx, ny, nz] {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    let mut clamped = 0;
    match v.data() {
        VolumeData::Binary(d) => out.extend_from_slice(d),
        VolumeData::Gray(d) => {
            for &x in d {
                let c = x.clamp(0.0, 1.0);
                if c != x {
                    clamped += 1;
                }
                out.extend_from_slice(&c.to_le_bytes());
            }
        }
    }
    (out, clamped)
}

fn u32_at(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4 bytes"))
}

pub fn decode(bytes: &[u8]) -> Result<Volume> {
    if bytes.len() < HEADER_LEN {
        return Err(format_err(
            bytes.len(),
            format!("header needs {HEADER_LEN} bytes"),
        ));
    }
    if &bytes[0..4] != MAGIC {
        return Err(format_err(0, format!("bad magic {:?}", &bytes[0..4])));
    }
    if bytes[4] != VERSION {
        return Err(format_err(4, format!("unsupported version {}", bytes[4])));
    }
    let dtype = match bytes[5] {
        0 => DType::BinaryU8,
        1 => DType::GrayF32,
        other => return Err(format_err(5, format!("unknown dtype code {other}"))),
    };
    if bytes[6..8] != [0, 0] {
        return Err(format_err(6, "reserved bytes must be zero"));
    }
    let mut dims = [0usize; 3];
    for (k, d) in dims.iter_mut().enumerate() {
        let at = 8 + 4 * k;
        *d = u32_at(bytes, at) as usize;
        if *d == 0 || *d > MAX_DIM {
            return Err(format_err(
                at,
                format!("dimension {d} outside 1..={MAX_DIM}"),
            ));
        }
    }
    let n: usize = dims.iter().product();
    let width = match dtype {
        DType::BinaryU8 => 1,
        DType::GrayF32 => 4,
    };
    let expected = HEADER_LEN + n * width;
    if bytes.len() < expected {
        return Err(format_err(
            bytes.len(),
            format!("payload truncated, expected {expected} bytes"),
        ));
    }
    if bytes.len() > expected {
        return Err(format_err(expected, "trailing bytes after payload"));
    }
    let payload = &bytes[HEADER_LEN..];
    match dtype {
        DType::BinaryU8 => {
            if let Some(i) = payload.iter().position(|&b| b > 1) {
                return Err(format_err(
                    HEADER_LEN + i,
                    format!("binary voxel value {}", payload[i]),
                ));
            }
            Ok(Volume::binary(dims, payload.to_vec())?)
        }
        DType::GrayF32 => {
            let mut data = Vec::with_capacity(n);
            for (i, c) in payload.chunks_exact(4).enumerate() {
                let v = f32::from_le_bytes(c.try_into().expect("4 bytes"));
                if !(0.0..=1.0).contains(&v) {
                    return Err(format_err(
                        HEADER_LEN + 4 * i,
                        format!("gray value {v} outside [0, 1]"),
                    ));
                }
                data.push(v);
            }
            Ok(Volume::gray(dims, data)?)
        }
    }
}

pub fn read(path: impl AsRef<Path>) -> Result<Volume> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

/// Writes `v` and returns how many gray voxels had to be clamped.
pub fn write(path: impl AsRef<Path>, v: &Volume) -> Result<usize> {
    let path = path.as_ref();
    let (bytes, clamped) = encode(v);
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))?;
    Ok(clamped)
}
