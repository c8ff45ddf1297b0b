//! Training driver with a per-epoch log.

use std::time::Instant;

use ssgrl_core::model::{Context, Model};
use ssgrl_core::optim::{mean_loss, EpochStats, Sample, TrainConfig, Trainer};
use ssgrl_core::ParamSet;

use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub stats: EpochStats,
    pub wall_ms: u128,
}

impl EpochRecord {
    /// `epoch<TAB>mean_loss<TAB>lr<TAB>wall_ms`
    pub fn log_line(&self) -> String {
        format!(
            "{}\t{}\t{}\t{}",
            self.stats.epoch, self.stats.mean_loss, self.stats.lr, self.wall_ms
        )
    }
}

/// Splits a log line back into epoch, loss, lr and wall time.
pub fn parse_log_line(line: &str) -> Option<(usize, f64, f64, u128)> {
    let f: Vec<&str> = line.split('\t').collect();
    if f.len() != 4 {
        return None;
    }
    Some((
        f[0].parse().ok()?,
        f[1].parse().ok()?,
        f[2].parse().ok()?,
        f[3].parse().ok()?,
    ))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSummary {
    /// Mean per-sample loss before the first update.
    pub initial_loss: f64,
    pub epochs: Vec<EpochRecord>,
}

impl TrainSummary {
    pub fn final_loss(&self) -> f64 {
        self.epochs
            .last()
            .map_or(self.initial_loss, |r| r.stats.mean_loss)
    }
}

/// Runs `config.epochs` epochs, calling `on_epoch` after each. On error the
/// parameters hold the state reached so far.
pub fn train(
    model: &Model,
    params: &mut ParamSet,
    ctx: &Context<'_>,
    data: &[Sample],
    config: TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord) -> Result<()>,
) -> Result<TrainSummary> {
    let initial_loss = mean_loss(model, params, ctx, data)?;
    if !initial_loss.is_finite() {
        return Err(ssgrl_core::Error::Numeric(format!("initial loss is {initial_loss}")).into());
    }
    let mut trainer = Trainer::new(params, config)?;
    let mut epochs = Vec::with_capacity(config.epochs);
    for _ in 0..config.epochs {
        let start = Instant::now();
        let stats = trainer.run_epoch(model, params, ctx, data)?;
        let record = EpochRecord {
            stats,
            wall_ms: start.elapsed().as_millis(),
        };
        on_epoch(&record)?;
        epochs.push(record);
    }
    Ok(TrainSummary {
        initial_loss,
        epochs,
    })
}
