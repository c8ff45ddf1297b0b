//! Binary checkpoints.
//!
//! Little-endian throughout: the magic `SSGRL1`; the model configuration as
//! eleven `u32` (C, W, H, N, d_s, d1, d2, d_h, d_o, T, variant code) and a
//! `u64` seed; then every parameter tensor in the model's canonical order as
//! `u32` name length, UTF-8 name, `u32` rank, `u32` extents and `f64` values.
//! Tensors run to the end of the file.

use std::path::Path;

use ssgrl_core::model::{Model, ModelConfig, Variant};
use ssgrl_core::{ParamSet, Tensor};

use crate::error::{display_name, read_bytes, write_file, Error, Result};

pub const MAGIC: &[u8; 6] = b"SSGRL1";

pub fn encode(config: &ModelConfig, params: &ParamSet) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    let dims = [
        config.categories,
        config.width,
        config.height,
        config.channels,
        config.embed_dim,
        config.joint_dim,
        config.fused_dim,
        config.hidden_dim,
        config.output_dim,
        config.steps,
    ];
    for d in dims {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    out.extend_from_slice(&config.variant.code().to_le_bytes());
    out.extend_from_slice(&config.seed.to_le_bytes());
    for (name, t) in params.iter() {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
        for &e in t.shape() {
            out.extend_from_slice(&(e as u32).to_le_bytes());
        }
        for &v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    file: &'a str,
}

impl Reader<'_> {
    fn err(&self, offset: usize, msg: impl Into<String>) -> Error {
        Error::Binary {
            file: self.file.into(),
            offset: offset as u64,
            msg: msg.into(),
        }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&[u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(self.err(self.bytes.len(), format!("truncated while reading {what}")));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")) as usize)
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.take(8, what)?.try_into().expect("8 bytes"),
        ))
    }

    fn at_end(&self) -> bool {
        self.pos == self.bytes.len()
    }
}

/// Decodes and validates a checkpoint against the layout its configuration
/// implies.
pub fn decode(bytes: &[u8], file: &str) -> Result<(Model, ParamSet)> {
    let mut r = Reader {
        bytes,
        pos: 0,
        file,
    };
    if r.take(MAGIC.len(), "magic").ok() != Some(MAGIC.as_slice()) {
        return Err(r.err(0, "missing SSGRL1 magic"));
    }
    let mut d = [0usize; 10];
    for v in d.iter_mut() {
        *v = r.u32("configuration")?;
    }
    let variant_at = r.pos;
    let variant = Variant::from_code(r.u32("variant")? as u32)
        .map_err(|_| r.err(variant_at, "unknown variant code"))?;
    let seed = r.u64("seed")?;
    let config = ModelConfig {
        categories: d[0],
        width: d[1],
        height: d[2],
        channels: d[3],
        embed_dim: d[4],
        joint_dim: d[5],
        fused_dim: d[6],
        hidden_dim: d[7],
        output_dim: d[8],
        steps: d[9],
        variant,
        seed,
    };
    config
        .validate()
        .map_err(|e| r.err(MAGIC.len(), format!("invalid configuration: {e}")))?;
    let (model, template) = Model::new(config)?;
    let mut params = ParamSet::new();
    for (expected_name, expected) in template.iter() {
        let start = r.pos;
        if r.at_end() {
            return Err(r.err(start, format!("missing tensor `{expected_name}`")));
        }
        let len = r.u32("name length")?;
        let raw = r.take(len, "name")?.to_vec();
        let name = String::from_utf8(raw).map_err(|_| r.err(start + 4, "name is not UTF-8"))?;
        if name != expected_name {
            return Err(r.err(
                start,
                format!("expected tensor `{expected_name}`, found `{name}`"),
            ));
        }
        let rank = r.u32("rank")?;
        if rank != expected.rank() {
            return Err(r.err(
                start,
                format!("`{name}` has rank {rank}, expected {}", expected.rank()),
            ));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32("extent")?);
        }
        if shape != expected.shape() {
            return Err(r.err(
                start,
                format!(
                    "`{name}` has shape {shape:?}, expected {:?}",
                    expected.shape()
                ),
            ));
        }
        let payload = r.take(8 * expected.numel(), "values")?;
        let data = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        params.insert(&name, Tensor::new(shape, data)?)?;
    }
    if !r.at_end() {
        return Err(r.err(r.pos, "trailing bytes after the last tensor"));
    }
    Ok((model, params))
}

pub fn read(path: &Path) -> Result<(Model, ParamSet)> {
    decode(&read_bytes(path)?, &display_name(path))
}

pub fn write(path: &Path, config: &ModelConfig, params: &ParamSet) -> Result<()> {
    write_file(path, encode(config, params))
}
