//! Multi-label recognition head built from semantic-guided attention and
//! gated graph propagation over a label co-occurrence graph.
//!
//! The crate is `no_std` (it needs `alloc`) and contains only the numeric
//! parts of the system:
//!
//! - [`tensor`] and [`tape`]: dense f64 tensors and a reverse-mode tape
//! - [`gradcheck`]: central finite-difference checker for any tape loss
//! - [`decoupling`]: low-rank bilinear fusion, attention and per-category pooling
//! - [`cooccurrence`]: conditional-probability label graph
//! - [`interaction`]: GRU-gated propagation over that graph
//! - [`model`]: the assembled head, its ablation variants and the loss
//! - [`optim`]: Adam and plateau learning-rate decay
//! - [`metrics`]: AP/mAP and the overall/per-class precision, recall and F1
//!
//! File formats, the synthetic data generator and the command line live in
//! the `ssgrl` crate.

#![no_std]

extern crate alloc;

pub mod cooccurrence;
pub mod decoupling;
pub mod error;
pub mod gradcheck;
pub mod interaction;
pub mod math;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod tape;
pub mod tensor;

pub use error::{Error, Result};
pub use tape::{Tape, Var};
pub use tensor::{ParamId, ParamSet, Tensor};
