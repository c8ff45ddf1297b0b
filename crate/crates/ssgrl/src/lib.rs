//! File formats, synthetic data, the training driver and the command-line
//! front end around [`ssgrl_core`].

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod dataset;
pub mod error;
pub mod fmap;
pub mod gradcheck;
pub mod report;
pub mod synth;
pub mod text;
pub mod train;

pub use error::{Error, Result};
