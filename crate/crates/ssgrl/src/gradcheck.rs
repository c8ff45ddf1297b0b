//! End-to-end finite-difference check of the toy model.

use ssgrl_core::cooccurrence::build_graph;
use ssgrl_core::gradcheck::{grad_check, GradCheckReport, DEFAULT_STEP};
use ssgrl_core::model::{Context, Model, ModelConfig, Variant};
use ssgrl_core::tape::Fault;

use crate::dataset;
use crate::error::Result;
use crate::synth::{self, SyntheticSpec};

/// Worst relative error the check accepts.
pub const TOLERANCE: f64 = 1e-4;

/// Toy dimensions with four categories on a 2×2 grid.
pub fn toy_config(variant: Variant, seed: u64) -> ModelConfig {
    let mut cfg = ModelConfig::toy(4, 2, 2);
    cfg.variant = variant;
    cfg.seed = seed;
    cfg
}

/// Synthetic images the loss is evaluated on.
pub fn instance_spec(cfg: &ModelConfig) -> SyntheticSpec {
    SyntheticSpec {
        categories: cfg.categories,
        width: cfg.width,
        height: cfg.height,
        channels: cfg.channels,
        embed_dim: cfg.embed_dim,
        train_samples: 2,
        test_samples: 0,
        label_density: 2.0,
        pattern_strength: 5.0,
        noise_sigma: 1.0,
        bias_pairs: Vec::new(),
        bias_probability: 0.0,
        seed: cfg.seed,
    }
}

/// Checks every parameter of `cfg`'s model against central differences of
/// the summed loss over the instance images.
pub fn run(cfg: &ModelConfig, fault: Fault) -> Result<GradCheckReport> {
    let (model, mut params) = Model::new(*cfg)?;
    let data = synth::generate(&instance_spec(cfg))?;
    let annotations = dataset::annotations_of(&data.categories, &data.train)?;
    let graph = build_graph(&annotations)?;
    let ctx = Context {
        embeddings: &data.embeddings,
        graph: &graph,
    };
    let report = grad_check(&mut params, DEFAULT_STEP, |ps| {
        let mut total = 0.0;
        for s in &data.train {
            total += model.sample_loss(ps, &ctx, &s.features, &s.labels, true, fault)?;
        }
        Ok(total)
    })?;
    Ok(report)
}
