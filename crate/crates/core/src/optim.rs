//! Adam with bias correction, plateau learning-rate decay, and the epoch loop.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::decoupling::FeatureMap;
use crate::error::{Error, Result};
use crate::math;
use crate::model::{Context, Model};
use crate::tape::Fault;
use crate::tensor::ParamSet;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-5,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moment estimates for every tensor of one [`ParamSet`].
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(params: &ParamSet, config: AdamConfig) -> Self {
        let zeros: Vec<Vec<f64>> = params.iter().map(|(_, t)| vec![0.0; t.numel()]).collect();
        Adam {
            config,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn lr(&self) -> f64 {
        self.config.lr
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.config.lr = lr;
    }

    pub fn first_moment(&self, index: usize) -> &[f64] {
        &self.m[index]
    }

    pub fn second_moment(&self, index: usize) -> &[f64] {
        &self.v[index]
    }

    /// One update from the gradients currently held by `params`. Nothing is
    /// modified if any gradient is non-finite.
    pub fn step(&mut self, params: &mut ParamSet) -> Result<()> {
        if params.len() != self.m.len() {
            return Err(Error::Config(format!(
                "optimizer tracks {} tensors, parameter set has {}",
                self.m.len(),
                params.len()
            )));
        }
        for id in params.ids() {
            let t = params.get(id);
            let grad = t.grad().ok_or_else(|| {
                Error::Config(format!(
                    "parameter `{}` has no gradient slot",
                    params.name(id)
                ))
            })?;
            if grad.len() != self.m[id.0].len() {
                return Err(Error::Config(format!(
                    "parameter `{}` changed shape",
                    params.name(id)
                )));
            }
            if let Some(bad) = grad.iter().find(|g| !g.is_finite()) {
                return Err(Error::Numeric(format!(
                    "non-finite gradient {bad} in parameter `{}`",
                    params.name(id)
                )));
            }
        }

        self.step += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        let t = self.step as f64;
        let correction1 = 1.0 - libm::pow(beta1, t);
        let correction2 = 1.0 - libm::pow(beta2, t);
        for id in params.ids() {
            let grad: Vec<f64> = params.get(id).grad().expect("checked above").to_vec();
            let (m, v) = (&mut self.m[id.0], &mut self.v[id.0]);
            let values = params.get_mut(id).data_mut();
            for i in 0..values.len() {
                let g = grad[i];
                m[i] = beta1 * m[i] + (1.0 - beta1) * g;
                v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
                let m_hat = m[i] / correction1;
                let v_hat = v[i] / correction2;
                values[i] -= lr * m_hat / (math::sqrt(v_hat) + eps);
            }
        }
        Ok(())
    }
}

/// Divides the learning rate when the monitored loss stops improving.
#[derive(Debug, Clone, PartialEq)]
pub struct PlateauDecay {
    pub patience: usize,
    /// Minimum relative improvement that counts as progress.
    pub threshold: f64,
    pub factor: f64,
    best: Option<f64>,
    stale: usize,
}

impl PlateauDecay {
    pub fn new(patience: usize, threshold: f64, factor: f64) -> Self {
        PlateauDecay {
            patience,
            threshold,
            factor,
            best: None,
            stale: 0,
        }
    }

    /// Records an epoch's loss; returns the new learning rate when it decays.
    pub fn observe(&mut self, loss: f64, lr: f64) -> Option<f64> {
        match self.best {
            Some(best) if loss >= best * (1.0 - self.threshold) => {
                self.stale += 1;
                if self.stale >= self.patience {
                    self.stale = 0;
                    self.best = Some(best.min(loss));
                    return Some(lr / self.factor);
                }
            }
            _ => {
                self.best = Some(loss);
                self.stale = 0;
            }
        }
        None
    }
}

impl Default for PlateauDecay {
    fn default() -> Self {
        PlateauDecay::new(5, 1e-4, 10.0)
    }
}

/// A labelled feature map.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: alloc::string::String,
    pub features: FeatureMap,
    pub labels: Vec<bool>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub plateau_patience: usize,
    pub plateau_threshold: f64,
    /// Seeds the per-epoch shuffle.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 10,
            batch_size: 4,
            adam: AdamConfig::default(),
            plateau_patience: 5,
            plateau_threshold: 1e-4,
            seed: 0,
        }
    }
}

/// Summary of one epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    /// 1-based.
    pub epoch: usize,
    /// Summed per-sample loss averaged over samples.
    pub mean_loss: f64,
    /// Learning rate used during the epoch.
    pub lr: f64,
}

/// Mini-batch training state: shuffle stream, Adam moments, plateau monitor.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub config: TrainConfig,
    adam: Adam,
    plateau: PlateauDecay,
    rng: ChaCha8Rng,
    epoch: usize,
}

impl Trainer {
    pub fn new(params: &ParamSet, config: TrainConfig) -> Result<Self> {
        if config.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        Ok(Trainer {
            adam: Adam::new(params, config.adam),
            plateau: PlateauDecay::new(config.plateau_patience, config.plateau_threshold, 10.0),
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            epoch: 0,
            config,
        })
    }

    pub fn lr(&self) -> f64 {
        self.adam.lr()
    }

    pub fn optimizer(&self) -> &Adam {
        &self.adam
    }

    /// Shuffles, then runs one Adam step per batch on the summed batch loss.
    pub fn run_epoch(
        &mut self,
        model: &Model,
        params: &mut ParamSet,
        ctx: &Context<'_>,
        data: &[Sample],
    ) -> Result<EpochStats> {
        if data.is_empty() {
            return Err(Error::Input("training set is empty".into()));
        }
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut self.rng);
        let lr = self.adam.lr();
        let mut total = 0.0;
        for batch in order.chunks(self.config.batch_size) {
            params.zero_grad();
            for &i in batch {
                let s = &data[i];
                let loss =
                    model.sample_loss(params, ctx, &s.features, &s.labels, true, Fault::None)?;
                if !loss.is_finite() {
                    return Err(Error::Numeric(format!(
                        "loss became {loss} on sample `{}`",
                        s.id
                    )));
                }
                total += loss;
            }
            self.adam.step(params)?;
        }
        params.zero_grad();
        self.epoch += 1;
        let mean_loss = total / data.len() as f64;
        if let Some(new_lr) = self.plateau.observe(mean_loss, lr) {
            self.adam.set_lr(new_lr);
        }
        Ok(EpochStats {
            epoch: self.epoch,
            mean_loss,
            lr,
        })
    }
}

/// Mean per-sample loss without touching gradients.
pub fn mean_loss(
    model: &Model,
    params: &mut ParamSet,
    ctx: &Context<'_>,
    data: &[Sample],
) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Input("dataset is empty".into()));
    }
    let mut total = 0.0;
    for s in data {
        total += model.sample_loss(params, ctx, &s.features, &s.labels, false, Fault::None)?;
    }
    Ok(total / data.len() as f64)
}
