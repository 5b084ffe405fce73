//! Binary PGM (P5) export of axis-aligned slices.

use std::path::Path;

use geogan_core::{Axis, Volume};

use crate::error::{Error, Result};

/// `round(v * 255)` with halves rounded up, after clamping to `[0, 1]`.
pub fn gray_byte(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) as f64 * 255.0 + 0.5).floor() as u8
}

/// P5 image of `v.slice(axis, index)`; the lower remaining axis runs along each row.
pub fn encode_slice(v: &Volume, axis: Axis, index: usize) -> Result<Vec<u8>> {
    let (w, h, values) = v.slice(axis, index)?;
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend(values.into_iter().map(gray_byte));
    Ok(out)
}

pub fn export_slice(v: &Volume, axis: Axis, index: usize, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_slice(v, axis, index)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}
