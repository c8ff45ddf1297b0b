//! The assembled recognition head and its ablation variants.
//!
//! `full`: decoupled category features initialise the graph nodes, `T` gated
//! propagation steps run over the co-occurrence graph, `o_c = tanh(W_o
//! [h_c^T, h_c^0] + b_o)` and each category has its own linear classifier.

use alloc::format;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::cooccurrence::CooccurrenceGraph;
use crate::decoupling::{
    decouple, ones_column, AttentionMap, DecouplingDims, DecouplingParams, EmbeddingTable,
    FeatureMap,
};
use crate::error::{dim_err, Error, Result};
use crate::interaction::{propagate, GraphVars, PropagationParams};
use crate::math;
use crate::tape::{Fault, Tape, Var};
use crate::tensor::{ParamId, ParamSet, Tensor};

/// Which parts of the head are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    /// Attention decoupling, graph propagation and output head.
    Full,
    /// Every node starts from the spatially averaged feature.
    NoSd,
    /// Nodes start from an affine map of `[averaged feature, x_c]`.
    NoSdConcat,
    /// No propagation; classifiers read the decoupled features directly.
    NoSi,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::Full,
        Variant::NoSd,
        Variant::NoSdConcat,
        Variant::NoSi,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoSd => "no_SD",
            Variant::NoSdConcat => "no_SD_concat",
            Variant::NoSi => "no_SI",
        }
    }

    pub fn code(self) -> u32 {
        match self {
            Variant::Full => 0,
            Variant::NoSd => 1,
            Variant::NoSdConcat => 2,
            Variant::NoSi => 3,
        }
    }

    pub fn from_code(code: u32) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.code() == code)
            .ok_or_else(|| Error::Config(format!("unknown variant code {code}")))
    }

    fn uses_decoupling(self) -> bool {
        matches!(self, Variant::Full | Variant::NoSi)
    }

    fn uses_propagation(self) -> bool {
        !matches!(self, Variant::NoSi)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown variant `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelConfig {
    pub categories: usize,
    pub width: usize,
    pub height: usize,
    /// Feature channels `N`.
    pub channels: usize,
    /// Embedding dimension `d_s`.
    pub embed_dim: usize,
    /// Joint dimension `d1` of the bilinear fusion.
    pub joint_dim: usize,
    /// Fused dimension `d2`.
    pub fused_dim: usize,
    /// Node state dimension `d_h`; must equal `channels`.
    pub hidden_dim: usize,
    /// Output vector dimension `d_o`.
    pub output_dim: usize,
    /// Propagation steps `T`.
    pub steps: usize,
    pub variant: Variant,
    pub seed: u64,
}

impl ModelConfig {
    /// Dimensions of the full-size head (2048-channel backbone, 300-d embeddings).
    pub fn paper(categories: usize, width: usize, height: usize) -> Self {
        ModelConfig {
            categories,
            width,
            height,
            channels: 2048,
            embed_dim: 300,
            joint_dim: 1024,
            fused_dim: 1024,
            hidden_dim: 2048,
            output_dim: 2048,
            steps: 3,
            variant: Variant::Full,
            seed: 0,
        }
    }

    /// Small dimensions for tests and desk-scale runs.
    pub fn toy(categories: usize, width: usize, height: usize) -> Self {
        ModelConfig {
            categories,
            width,
            height,
            channels: 8,
            embed_dim: 5,
            joint_dim: 6,
            fused_dim: 6,
            hidden_dim: 8,
            output_dim: 8,
            steps: 2,
            variant: Variant::Full,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("categories", self.categories),
            ("width", self.width),
            ("height", self.height),
            ("channels", self.channels),
            ("embed_dim", self.embed_dim),
            ("joint_dim", self.joint_dim),
            ("fused_dim", self.fused_dim),
            ("hidden_dim", self.hidden_dim),
            ("output_dim", self.output_dim),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be at least 1")));
        }
        if self.hidden_dim != self.channels {
            return Err(Error::Config(format!(
                "hidden_dim ({}) must equal channels ({}) so pooled features can seed the node states",
                self.hidden_dim, self.channels
            )));
        }
        Ok(())
    }

    pub fn locations(&self) -> usize {
        self.width * self.height
    }

    fn decoupling_dims(&self) -> DecouplingDims {
        DecouplingDims {
            channels: self.channels,
            embed: self.embed_dim,
            joint: self.joint_dim,
            fused: self.fused_dim,
        }
    }

    fn classifier_input(&self) -> usize {
        if self.variant == Variant::NoSi {
            self.hidden_dim
        } else {
            self.output_dim
        }
    }
}

/// Affine map from concatenated features to the node state (`no_SD_concat`).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InitProjection {
    pub w: ParamId,
    pub b: ParamId,
}

/// `f_o` plus the `C` unshared classifier heads.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ClassifierParams {
    /// `2d_h × d_o`, absent when propagation is disabled.
    pub output_w: Option<ParamId>,
    pub output_b: Option<ParamId>,
    /// `C × d_in`, row `c` is head `c`.
    pub heads_w: ParamId,
    /// `C`
    pub heads_b: ParamId,
}

/// Where each block lives inside the model's [`ParamSet`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Layout {
    pub decoupling: Option<DecouplingParams>,
    pub init_projection: Option<InitProjection>,
    pub propagation: Option<PropagationParams>,
    pub classifier: ClassifierParams,
}

/// Category logits and their sigmoid probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub logits: Vec<f64>,
    pub probabilities: Vec<f64>,
}

impl Prediction {
    pub fn from_logits(logits: Vec<f64>) -> Self {
        let probabilities = logits.iter().map(|&s| math::sigmoid(s)).collect();
        Prediction {
            logits,
            probabilities,
        }
    }
}

/// Inputs shared by every image: embeddings and the graph.
#[derive(Debug, Clone, Copy)]
pub struct Context<'a> {
    pub embeddings: &'a EmbeddingTable,
    pub graph: &'a CooccurrenceGraph,
}

/// Tape handles of one forward pass.
#[derive(Debug, Clone, Copy)]
pub struct ForwardVars {
    /// `C`
    pub logits: Var,
    /// `C × L`, only for variants with attention decoupling.
    pub attention: Option<Var>,
    /// `C × d_h`
    pub initial_states: Var,
    /// `C × d_h`, only when propagation runs.
    pub final_states: Option<Var>,
    /// `C × d_o`, only when the output head runs.
    pub outputs: Option<Var>,
}

/// Intermediate values of one forward pass, for inspection.
#[derive(Debug, Clone, PartialEq)]
pub struct DebugDump {
    pub prediction: Prediction,
    pub attention: Option<AttentionMap>,
    pub initial_states: Tensor,
    pub final_states: Option<Tensor>,
    pub outputs: Option<Tensor>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Model {
    config: ModelConfig,
    layout: Layout,
}

fn bound(fan_in: usize) -> f64 {
    1.0 / math::sqrt(fan_in as f64)
}

impl Model {
    /// Builds the model and its parameters, initialised uniformly in
    /// `±1/√fan_in` from `config.seed`.
    pub fn new(config: ModelConfig) -> Result<(Model, ParamSet)> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut params = ParamSet::new();
        let c = config.categories;
        let hidden = config.hidden_dim;

        let decoupling = if config.variant.uses_decoupling() {
            Some(DecouplingParams::register(
                &mut params,
                config.decoupling_dims(),
                &mut rng,
            )?)
        } else {
            None
        };
        let init_projection = if config.variant == Variant::NoSdConcat {
            let fan_in = config.channels + config.embed_dim;
            Some(InitProjection {
                w: params.insert(
                    "init.W",
                    Tensor::uniform(&[fan_in, hidden], bound(fan_in), &mut rng),
                )?,
                b: params.insert(
                    "init.b",
                    Tensor::uniform(&[hidden], bound(fan_in), &mut rng),
                )?,
            })
        } else {
            None
        };
        let propagation = if config.variant.uses_propagation() {
            Some(PropagationParams::register(&mut params, hidden, &mut rng)?)
        } else {
            None
        };
        let (output_w, output_b) = if config.variant.uses_propagation() {
            let fan_in = 2 * hidden;
            let out = config.output_dim;
            (
                Some(params.insert(
                    "out.W",
                    Tensor::uniform(&[fan_in, out], bound(fan_in), &mut rng),
                )?),
                Some(params.insert("out.b", Tensor::uniform(&[out], bound(fan_in), &mut rng))?),
            )
        } else {
            (None, None)
        };
        let d_in = config.classifier_input();
        let classifier = ClassifierParams {
            output_w,
            output_b,
            heads_w: params.insert("cls.W", Tensor::uniform(&[c, d_in], bound(d_in), &mut rng))?,
            heads_b: params.insert("cls.b", Tensor::uniform(&[c], bound(d_in), &mut rng))?,
        };
        let layout = Layout {
            decoupling,
            init_projection,
            propagation,
            classifier,
        };
        Ok((Model { config, layout }, params))
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    /// Checks that `params` has exactly this model's names and shapes.
    pub fn check_params(&self, params: &ParamSet) -> Result<()> {
        let (_, expected) = Model::new(self.config)?;
        if expected.len() != params.len() {
            return Err(Error::Config(format!(
                "expected {} parameter tensors, found {}",
                expected.len(),
                params.len()
            )));
        }
        for ((en, et), (n, t)) in expected.iter().zip(params.iter()) {
            if en != n || et.shape() != t.shape() {
                return Err(Error::Config(format!(
                    "parameter mismatch: expected `{en}` {:?}, found `{n}` {:?}",
                    et.shape(),
                    t.shape()
                )));
            }
        }
        Ok(())
    }

    fn check_inputs(&self, ctx: &Context<'_>, fm: &FeatureMap) -> Result<()> {
        let cfg = &self.config;
        if ctx.embeddings.len() != cfg.categories || ctx.graph.num_categories() != cfg.categories {
            return Err(Error::Config(format!(
                "model has {} categories, embeddings {}, graph {}",
                cfg.categories,
                ctx.embeddings.len(),
                ctx.graph.num_categories()
            )));
        }
        if ctx.embeddings.dim() != cfg.embed_dim {
            return Err(Error::Config(format!(
                "embedding dimension {} does not match configured {}",
                ctx.embeddings.dim(),
                cfg.embed_dim
            )));
        }
        if (fm.width(), fm.height(), fm.channels()) != (cfg.width, cfg.height, cfg.channels) {
            return Err(Error::Config(format!(
                "feature map is {}x{}x{}, model expects {}x{}x{}",
                fm.width(),
                fm.height(),
                fm.channels(),
                cfg.width,
                cfg.height,
                cfg.channels
            )));
        }
        Ok(())
    }

    /// Records the forward pass of one image on `tape`.
    pub fn forward(
        &self,
        tape: &mut Tape,
        params: &ParamSet,
        ctx: &Context<'_>,
        fm: &FeatureMap,
    ) -> Result<ForwardVars> {
        self.check_inputs(ctx, fm)?;
        let cfg = &self.config;
        let c = cfg.categories;
        let features = tape.constant(fm.as_matrix().clone());
        let embeddings = tape.constant(ctx.embeddings.vectors().clone());

        let mut attention = None;
        let initial_states = match cfg.variant {
            Variant::Full | Variant::NoSi => {
                let dp = self.layout.decoupling.expect("decoupling params");
                let vars = dp.load(tape, params)?;
                let out = decouple(tape, features, embeddings, &vars)?;
                attention = Some(out.attention);
                out.category_features
            }
            Variant::NoSd => {
                let pooled = self.average_pool(tape, features)?;
                let ones = ones_column(tape, c);
                tape.matmul(ones, pooled)?
            }
            Variant::NoSdConcat => {
                let proj = self.layout.init_projection.expect("init projection");
                let pooled = self.average_pool(tape, features)?;
                let ones = ones_column(tape, c);
                let repeated = tape.matmul(ones, pooled)?;
                let joined = tape.concat(repeated, embeddings, 1)?;
                let w = tape.param(params, proj.w);
                let b = tape.param(params, proj.b);
                let b = tape.reshape(b, &[1, cfg.hidden_dim])?;
                let mapped = tape.matmul(joined, w)?;
                let bias = tape.matmul(ones, b)?;
                tape.add(mapped, bias)?
            }
        };

        let (final_states, classifier_input, outputs) = match self.layout.propagation {
            Some(pp) => {
                let vars = pp.load(tape, params);
                let graph = GraphVars::load(tape, ctx.graph)?;
                let final_states = propagate(tape, initial_states, &graph, &vars, cfg.steps)?;
                let cls = self.layout.classifier;
                let w = tape.param(params, cls.output_w.expect("output head"));
                let b = tape.param(params, cls.output_b.expect("output head"));
                let b = tape.reshape(b, &[1, cfg.output_dim])?;
                let joined = tape.concat(final_states, initial_states, 1)?;
                let mapped = tape.matmul(joined, w)?;
                let ones = ones_column(tape, c);
                let bias = tape.matmul(ones, b)?;
                let pre = tape.add(mapped, bias)?;
                let outputs = tape.tanh(pre);
                (Some(final_states), outputs, Some(outputs))
            }
            None => (None, initial_states, None),
        };

        let logits = self.classify(tape, params, classifier_input)?;
        Ok(ForwardVars {
            logits,
            attention,
            initial_states,
            final_states,
            outputs,
        })
    }

    /// `1 × N` spatial mean of the `L × N` feature matrix.
    fn average_pool(&self, tape: &mut Tape, features: Var) -> Result<Var> {
        let l = self.config.locations();
        let weights = tape.constant(Tensor::filled(&[1, l], 1.0 / l as f64));
        tape.matmul(weights, features)
    }

    /// `s_c = <w_c, o_c> + b_c` with one weight row per category.
    fn classify(&self, tape: &mut Tape, params: &ParamSet, inputs: Var) -> Result<Var> {
        let cls = self.layout.classifier;
        let c = self.config.categories;
        let d_in = self.config.classifier_input();
        if tape.shape(inputs) != [c, d_in] {
            return Err(dim_err("classify", tape.shape(inputs), &[c, d_in]));
        }
        let w = tape.param(params, cls.heads_w);
        let b = tape.param(params, cls.heads_b);
        let weighted = tape.mul(inputs, w)?;
        let ones = ones_column(tape, d_in);
        let scores = tape.matmul(weighted, ones)?;
        let scores = tape.reshape(scores, &[c])?;
        tape.add(scores, b)
    }

    pub fn predict(
        &self,
        params: &ParamSet,
        ctx: &Context<'_>,
        fm: &FeatureMap,
    ) -> Result<Prediction> {
        let mut tape = Tape::new();
        let vars = self.forward(&mut tape, params, ctx, fm)?;
        Ok(Prediction::from_logits(
            tape.value(vars.logits).data().to_vec(),
        ))
    }

    /// Forward pass with every intermediate the variant produces.
    pub fn inspect(
        &self,
        params: &ParamSet,
        ctx: &Context<'_>,
        fm: &FeatureMap,
    ) -> Result<DebugDump> {
        let mut tape = Tape::new();
        let vars = self.forward(&mut tape, params, ctx, fm)?;
        let attention = match vars.attention {
            Some(a) => Some(AttentionMap::new(
                self.config.width,
                self.config.height,
                tape.value(a).clone(),
            )?),
            None => None,
        };
        Ok(DebugDump {
            prediction: Prediction::from_logits(tape.value(vars.logits).data().to_vec()),
            attention,
            initial_states: tape.value(vars.initial_states).clone(),
            final_states: vars.final_states.map(|v| tape.value(v).clone()),
            outputs: vars.outputs.map(|v| tape.value(v).clone()),
        })
    }

    /// Loss of one labelled image; with `backward` the gradient is added to
    /// the grad slots of `params`.
    pub fn sample_loss(
        &self,
        params: &mut ParamSet,
        ctx: &Context<'_>,
        fm: &FeatureMap,
        labels: &[bool],
        backward: bool,
        fault: Fault,
    ) -> Result<f64> {
        if labels.len() != self.config.categories {
            return Err(dim_err(
                "labels",
                &[labels.len()],
                &[self.config.categories],
            ));
        }
        let mut tape = Tape::with_fault(fault);
        let vars = self.forward(&mut tape, params, ctx, fm)?;
        let targets = Tensor::vector(labels.iter().map(|&y| if y { 1.0 } else { 0.0 }).collect());
        let loss = tape.bce_with_logits(vars.logits, &targets)?;
        if backward {
            tape.backward(loss, params)?;
        }
        Ok(tape.value(loss).data()[0])
    }
}

/// Summed binary cross-entropy over a batch of probability rows, with each
/// probability clamped to `[1e-12, 1 - 1e-12]` inside the logarithms.
pub fn bce_loss(probabilities: &[Vec<f64>], labels: &[Vec<bool>]) -> Result<f64> {
    const CLAMP: f64 = 1e-12;
    if probabilities.len() != labels.len() {
        return Err(dim_err("bce_loss", &[probabilities.len()], &[labels.len()]));
    }
    let mut total = 0.0;
    for (p_row, y_row) in probabilities.iter().zip(labels) {
        if p_row.len() != y_row.len() {
            return Err(dim_err("bce_loss", &[p_row.len()], &[y_row.len()]));
        }
        for (&p, &y) in p_row.iter().zip(y_row) {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Numeric(format!("probability {p} outside [0, 1]")));
            }
            let p = p.clamp(CLAMP, 1.0 - CLAMP);
            total -= if y { math::ln(p) } else { math::ln(1.0 - p) };
        }
    }
    Ok(total)
}
