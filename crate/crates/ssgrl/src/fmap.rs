//! `FMAP1` feature-map files.
//!
//! Layout: the five bytes `FMAP1`, then `W`, `H`, `N` as little-endian
//! `u32`, then `W·H·N` little-endian `f32` values with `w` varying slowest
//! and the channel fastest. Values are widened to `f64` on load.

use std::path::Path;

use ssgrl_core::decoupling::FeatureMap;

use crate::error::{display_name, read_bytes, write_file, Error, Result};

pub const MAGIC: &[u8; 5] = b"FMAP1";
const HEADER_LEN: usize = 5 + 3 * 4;

/// Serialises `fm`, rounding every value to `f32`.
pub fn encode(fm: &FeatureMap) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + fm.values().len() * 4);
    out.extend_from_slice(MAGIC);
    for extent in [fm.width(), fm.height(), fm.channels()] {
        out.extend_from_slice(&(extent as u32).to_le_bytes());
    }
    for &v in fm.values() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

pub fn decode(bytes: &[u8], file: &str) -> Result<FeatureMap> {
    let err = |offset: usize, msg: String| Error::Binary {
        file: file.to_string(),
        offset: offset as u64,
        msg,
    };
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(err(0, "missing FMAP1 magic".into()));
    }
    if bytes.len() < HEADER_LEN {
        return Err(err(
            bytes.len(),
            format!("header truncated, need {HEADER_LEN} bytes"),
        ));
    }
    let dim = |i: usize| {
        let at = MAGIC.len() + 4 * i;
        u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4 bytes")) as usize
    };
    let (w, h, n) = (dim(0), dim(1), dim(2));
    if w == 0 || h == 0 || n == 0 {
        return Err(err(
            MAGIC.len(),
            format!("extents {w}x{h}x{n} must be positive"),
        ));
    }
    let count = w
        .checked_mul(h)
        .and_then(|x| x.checked_mul(n))
        .filter(|&c| c <= (bytes.len() - HEADER_LEN) / 4 + 1)
        .ok_or_else(|| {
            err(
                bytes.len(),
                format!("payload truncated for {w}x{h}x{n} values"),
            )
        })?;
    let end = HEADER_LEN + 4 * count;
    if bytes.len() < end {
        return Err(err(
            bytes.len(),
            format!("payload truncated, expected {} bytes", end),
        ));
    }
    if bytes.len() > end {
        return Err(err(end, format!("{} trailing bytes", bytes.len() - end)));
    }
    let values: Vec<f64> = bytes[HEADER_LEN..end]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
        .collect();
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(err(HEADER_LEN + 4 * i, "non-finite value".into()));
    }
    FeatureMap::new(w, h, n, values).map_err(Error::from)
}

pub fn read(path: &Path) -> Result<FeatureMap> {
    decode(&read_bytes(path)?, &display_name(path))
}

pub fn write(path: &Path, fm: &FeatureMap) -> Result<()> {
    write_file(path, encode(fm))
}
