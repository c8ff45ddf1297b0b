//! Semantic decoupling: category embeddings steer an attention map over the
//! spatial feature grid, and each category pools its own feature vector.
//!
//! For a location feature `f` and category embedding `x` the fused feature is
//! `Pᵀ tanh((Uᵀf) ⊙ (Vᵀx)) + b`. A linear attention head turns it into one
//! score per location, scores are softmax-normalised over the grid, and the
//! category vector is the attention-weighted average of the raw features.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{dim_err, Error, Result};
use crate::tape::{Tape, Var};
use crate::tensor::{ParamId, ParamSet, Tensor};

/// Spatial grid of channel vectors, `W × H × N`, stored location-major with
/// location index `w * H + h`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    width: usize,
    height: usize,
    channels: usize,
    values: Tensor,
}

impl FeatureMap {
    /// `values` are in (w, h, channel) order.
    pub fn new(width: usize, height: usize, channels: usize, values: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 || channels == 0 {
            return Err(Error::Input(alloc::format!(
                "feature map extents must be positive, got {width}x{height}x{channels}"
            )));
        }
        if values.len() != width * height * channels {
            return Err(dim_err(
                "feature_map",
                &[width, height, channels],
                &[values.len()],
            ));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric(
                "feature map contains non-finite values".into(),
            ));
        }
        let values = Tensor::new(vec![width * height, channels], values)?;
        Ok(FeatureMap {
            width,
            height,
            channels,
            values,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn locations(&self) -> usize {
        self.width * self.height
    }

    pub fn location_index(&self, w: usize, h: usize) -> usize {
        w * self.height + h
    }

    /// The channel vector at `(w, h)`.
    pub fn at(&self, w: usize, h: usize) -> &[f64] {
        self.values.row(self.location_index(w, h))
    }

    /// `(W·H) × N` matrix, one row per location.
    pub fn as_matrix(&self) -> &Tensor {
        &self.values
    }

    pub fn values(&self) -> &[f64] {
        self.values.data()
    }
}

/// One semantic vector per category.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    names: Vec<String>,
    vectors: Tensor,
}

impl EmbeddingTable {
    pub fn new(names: Vec<String>, vectors: Tensor) -> Result<Self> {
        if vectors.rank() != 2 || vectors.shape()[0] != names.len() {
            return Err(dim_err("embedding_table", vectors.shape(), &[names.len()]));
        }
        if names.is_empty() || vectors.shape()[1] == 0 {
            return Err(Error::Input(
                "embedding table needs at least one category and dimension".into(),
            ));
        }
        if !vectors.all_finite() {
            return Err(Error::Numeric(
                "embedding table contains non-finite values".into(),
            ));
        }
        Ok(EmbeddingTable { names, vectors })
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.vectors.shape()[1]
    }

    /// `C × d_s` matrix.
    pub fn vectors(&self) -> &Tensor {
        &self.vectors
    }

    pub fn vector(&self, c: usize) -> &[f64] {
        self.vectors.row(c)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DecouplingDims {
    /// Feature channels `N`.
    pub channels: usize,
    /// Embedding dimension `d_s`.
    pub embed: usize,
    /// Joint (low-rank) dimension `d1`.
    pub joint: usize,
    /// Fused output dimension `d2`.
    pub fused: usize,
}

/// Parameter slots of the decoupling block inside a [`ParamSet`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DecouplingParams {
    pub dims: DecouplingDims,
    /// `N × d1`
    pub u: ParamId,
    /// `d_s × d1`
    pub v: ParamId,
    /// `d1 × d2`
    pub p: ParamId,
    /// `d2`
    pub b: ParamId,
    /// attention head weights, `d2 × 1`
    pub attn_w: ParamId,
    /// attention head bias, rank 0
    pub attn_b: ParamId,
}

fn fan_in_bound(fan_in: usize) -> f64 {
    1.0 / crate::math::sqrt(fan_in as f64)
}

impl DecouplingParams {
    /// Registers the block's tensors, initialised uniformly in `±1/√fan_in`.
    pub fn register<R: Rng + ?Sized>(
        params: &mut ParamSet,
        dims: DecouplingDims,
        rng: &mut R,
    ) -> Result<Self> {
        let DecouplingDims {
            channels,
            embed,
            joint,
            fused,
        } = dims;
        if [channels, embed, joint, fused].contains(&0) {
            return Err(Error::Config(
                "decoupling dimensions must be positive".into(),
            ));
        }
        Ok(DecouplingParams {
            dims,
            u: params.insert(
                "decouple.U",
                Tensor::uniform(&[channels, joint], fan_in_bound(channels), rng),
            )?,
            v: params.insert(
                "decouple.V",
                Tensor::uniform(&[embed, joint], fan_in_bound(embed), rng),
            )?,
            p: params.insert(
                "decouple.P",
                Tensor::uniform(&[joint, fused], fan_in_bound(joint), rng),
            )?,
            b: params.insert(
                "decouple.b",
                Tensor::uniform(&[fused], fan_in_bound(joint), rng),
            )?,
            attn_w: params.insert(
                "decouple.attn_w",
                Tensor::uniform(&[fused, 1], fan_in_bound(fused), rng),
            )?,
            attn_b: params.insert(
                "decouple.attn_b",
                Tensor::uniform(&[], fan_in_bound(fused), rng),
            )?,
        })
    }

    pub fn load(&self, tape: &mut Tape, params: &ParamSet) -> Result<DecouplingVars> {
        let b = tape.param(params, self.b);
        Ok(DecouplingVars {
            u: tape.param(params, self.u),
            v: tape.param(params, self.v),
            p: tape.param(params, self.p),
            b_row: tape.reshape(b, &[1, self.dims.fused])?,
            attn_w: tape.param(params, self.attn_w),
            attn_b: tape.param(params, self.attn_b),
        })
    }
}

/// Decoupling parameters placed on a tape.
#[derive(Debug, Clone, Copy)]
pub struct DecouplingVars {
    pub u: Var,
    pub v: Var,
    pub p: Var,
    /// bias as a `1 × d2` row
    pub b_row: Var,
    pub attn_w: Var,
    pub attn_b: Var,
}

/// `rows × 1` column of ones, used to repeat a row vector.
pub(crate) fn ones_column(tape: &mut Tape, rows: usize) -> Var {
    tape.constant(Tensor::filled(&[rows, 1], 1.0))
}

/// Fused features for every row of `features` (`L × N`) against one
/// embedding row `x` (`1 × d_s`); returns `L × d2`.
pub fn fuse(tape: &mut Tape, features: Var, x: Var, vars: &DecouplingVars) -> Result<Var> {
    let rows = tape.shape(features)[0];
    let projected_f = tape.matmul(features, vars.u)?;
    let projected_x = fuse_embedding(tape, x, vars)?;
    fuse_projected(tape, projected_f, projected_x, rows, vars)
}

fn fuse_embedding(tape: &mut Tape, x: Var, vars: &DecouplingVars) -> Result<Var> {
    tape.matmul(x, vars.v)
}

/// `tanh((f U) ⊙ (x V)) P` for every location, without the bias.
fn project_joint(
    tape: &mut Tape,
    projected_f: Var,
    projected_x: Var,
    rows: usize,
    vars: &DecouplingVars,
) -> Result<Var> {
    let ones = ones_column(tape, rows);
    let repeated_x = tape.matmul(ones, projected_x)?;
    let joint = tape.mul(projected_f, repeated_x)?;
    let squashed = tape.tanh(joint);
    tape.matmul(squashed, vars.p)
}

fn fuse_projected(
    tape: &mut Tape,
    projected_f: Var,
    projected_x: Var,
    rows: usize,
    vars: &DecouplingVars,
) -> Result<Var> {
    let mapped = project_joint(tape, projected_f, projected_x, rows, vars)?;
    let ones = ones_column(tape, rows);
    let bias = tape.matmul(ones, vars.b_row)?;
    tape.add(mapped, bias)
}

/// Unnormalised attention scores (`L × 1`) from fused features (`L × d2`).
pub fn attention_scores(tape: &mut Tape, fused: Var, vars: &DecouplingVars) -> Result<Var> {
    let scores = tape.matmul(fused, vars.attn_w)?;
    tape.add(scores, vars.attn_b)
}

/// Softmax over locations of the attention scores.
///
/// `b · w_a` and `b_a` add the same amount to every location and cancel in
/// the softmax, so the scores are taken from the bias-free projection. The
/// result is then exactly, not just mathematically, independent of both.
fn attend(
    tape: &mut Tape,
    projected_f: Var,
    projected_x: Var,
    rows: usize,
    vars: &DecouplingVars,
) -> Result<Var> {
    let mapped = project_joint(tape, projected_f, projected_x, rows, vars)?;
    let scores = tape.matmul(mapped, vars.attn_w)?;
    tape.softmax(scores, 0)
}

/// Normalised attention column (`L × 1`) of one category over all locations.
pub fn attention_coefficients(
    tape: &mut Tape,
    features: Var,
    x: Var,
    vars: &DecouplingVars,
) -> Result<Var> {
    let rows = tape.shape(features)[0];
    let projected_f = tape.matmul(features, vars.u)?;
    let projected_x = fuse_embedding(tape, x, vars)?;
    attend(tape, projected_f, projected_x, rows, vars)
}

/// Output of [`decouple`].
#[derive(Debug, Clone, Copy)]
pub struct Decoupled {
    /// `C × N`, row `c` is the pooled feature of category `c`.
    pub category_features: Var,
    /// `C × L`, row `c` is the attention map of category `c`.
    pub attention: Var,
}

/// Pools one feature vector per category from `features` (`L × N`) using
/// attention guided by each row of `embeddings` (`C × d_s`).
pub fn decouple(
    tape: &mut Tape,
    features: Var,
    embeddings: Var,
    vars: &DecouplingVars,
) -> Result<Decoupled> {
    let (locations, channels) = {
        let s = tape.shape(features);
        if s.len() != 2 {
            return Err(dim_err("decouple", s, &[]));
        }
        (s[0], s[1])
    };
    let (categories, embed) = {
        let s = tape.shape(embeddings);
        (s[0], s[1])
    };
    if categories == 0 {
        return Err(Error::Input("decouple needs at least one category".into()));
    }
    let projected_f = tape.matmul(features, vars.u)?;
    let features_t = tape.transpose(features)?;

    let mut pooled_rows: Option<Var> = None;
    let mut attention_rows: Option<Var> = None;
    for c in 0..categories {
        let x = embedding_row(tape, embeddings, c, embed)?;
        let projected_x = fuse_embedding(tape, x, vars)?;
        let attn = attend(tape, projected_f, projected_x, locations, vars)?;
        // (N × L)·(L × 1) is the weighted average of the location rows.
        let pooled = tape.matmul(features_t, attn)?;
        let pooled = tape.reshape(pooled, &[1, channels])?;
        let attn_row = tape.reshape(attn, &[1, locations])?;
        pooled_rows = Some(match pooled_rows {
            Some(acc) => tape.concat(acc, pooled, 0)?,
            None => pooled,
        });
        attention_rows = Some(match attention_rows {
            Some(acc) => tape.concat(acc, attn_row, 0)?,
            None => attn_row,
        });
    }
    Ok(Decoupled {
        category_features: pooled_rows.expect("at least one category"),
        attention: attention_rows.expect("at least one category"),
    })
}

/// Row `c` of a constant or parameter matrix, as a `1 × cols` node.
fn embedding_row(tape: &mut Tape, matrix: Var, c: usize, cols: usize) -> Result<Var> {
    let row = Tensor::new(vec![1, cols], tape.value(matrix).row(c).to_vec())?;
    Ok(tape.constant(row))
}

/// Per-category attention grids of one image.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionMap {
    width: usize,
    height: usize,
    /// `C × (W·H)`, location index `w * H + h`.
    grids: Tensor,
}

impl AttentionMap {
    pub fn new(width: usize, height: usize, grids: Tensor) -> Result<Self> {
        if grids.rank() != 2 || grids.shape()[1] != width * height {
            return Err(dim_err("attention_map", grids.shape(), &[width * height]));
        }
        Ok(AttentionMap {
            width,
            height,
            grids,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn categories(&self) -> usize {
        self.grids.shape()[0]
    }

    pub fn get(&self, c: usize, w: usize, h: usize) -> f64 {
        self.grids.at(c, w * self.height + h)
    }

    /// Attention of category `c` over locations.
    pub fn grid(&self, c: usize) -> &[f64] {
        self.grids.row(c)
    }

    /// `(w, h)` of the largest coefficient for category `c` (first on ties).
    pub fn argmax(&self, c: usize) -> (usize, usize) {
        let g = self.grid(c);
        let mut best = 0;
        for (i, &v) in g.iter().enumerate() {
            if v > g[best] {
                best = i;
            }
        }
        (best / self.height, best % self.height)
    }
}
