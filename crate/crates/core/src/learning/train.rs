//! Deterministic mini-batch training.

use super::adam::{sgd_adam_step, AdamState};
use super::loss::{LossKind, LossReport};
use super::model::{Model, ModelGrads};
use super::params::ParamStore;
use super::pipeline::{backward, forward, LossSpec, Sample};
use crate::error::{Error, Result};
use crate::grid::{CameraIntrinsics, DepthGrid};
use crate::par;
use crate::propagation::{BackwardHook, PropagationConfig};
use crate::rng::Rng;
use crate::synth::sample_sparse;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LrSchedule {
    Constant,
    /// Half-cosine from `lr` down to zero over all updates.
    Cosine,
}

impl LrSchedule {
    pub fn name(&self) -> &'static str {
        match self {
            LrSchedule::Constant => "constant",
            LrSchedule::Cosine => "cosine",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "constant" => Ok(LrSchedule::Constant),
            "cosine" => Ok(LrSchedule::Cosine),
            other => Err(Error::InvalidArgument(format!("unknown schedule {other:?}"))),
        }
    }

    /// Rate for update `step` of `total`.
    pub fn rate(&self, lr: f64, step: usize, total: usize) -> f64 {
        match self {
            LrSchedule::Constant => lr,
            LrSchedule::Cosine => {
                let t = step as f64 / total.max(1) as f64;
                0.5 * lr * (1.0 + (std::f64::consts::PI * t).cos())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub aux_weight: f64,
    pub loss: LossKind,
    pub seed: u64,
    pub batch_size: usize,
    pub schedule: LrSchedule,
    /// Each epoch, redraw every scene's sparse samples (same count) and
    /// mirror it left-right with probability 1/2.
    pub augment: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 60,
            lr: 3e-3,
            aux_weight: 0.1,
            loss: LossKind::L1,
            seed: 0,
            batch_size: 1,
            schedule: LrSchedule::Cosine,
            augment: false,
        }
    }
}

impl TrainConfig {
    /// A zero learning rate is accepted so a run can reproduce its
    /// initialization.
    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0) || !self.lr.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "learning rate must be non-negative, got {}",
                self.lr
            )));
        }
        if !(self.aux_weight >= 0.0) || !self.aux_weight.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "auxiliary weight must be non-negative, got {}",
                self.aux_weight
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch size must be positive".into()));
        }
        Ok(())
    }

    pub fn loss_spec(&self) -> LossSpec {
        LossSpec {
            kind: self.loss,
            aux_weight: self.aux_weight,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub store: ParamStore,
    /// Mean loss over each epoch's samples, measured before each update.
    pub log: Vec<LossReport>,
}

impl TrainOutcome {
    pub fn model(&self) -> Result<Model> {
        Model::from_store(&self.store)
    }
}

fn mean_report(reports: &[LossReport]) -> LossReport {
    let n = reports.len() as f64;
    let steps = reports[0].auxiliary.len();
    LossReport {
        total: reports.iter().map(|r| r.total).sum::<f64>() / n,
        main: reports.iter().map(|r| r.main).sum::<f64>() / n,
        auxiliary: (0..steps)
            .map(|s| reports.iter().map(|r| r.auxiliary[s]).sum::<f64>() / n)
            .collect(),
        valid_count: reports.iter().map(|r| r.valid_count).sum(),
    }
}

fn mirror(grid: &DepthGrid) -> DepthGrid {
    let w = grid.width();
    let values = (0..grid.len())
        .map(|i| grid.values()[i - i % w + (w - 1 - i % w)])
        .collect();
    DepthGrid::new(grid.height(), w, values).expect("mirrored grid keeps valid values")
}

/// A fresh view of `sample` for one epoch.
fn augmented(sample: &Sample, seed: u64) -> Result<Sample> {
    let mut rng = Rng::new(seed);
    let flip = rng.next_u64() & 1 == 1;
    let (gt, gray, intr) = if flip {
        let i = sample.intr;
        let cq = (sample.gt.width() as f64 - 1.0) - i.cq;
        (
            mirror(&sample.gt),
            sample.gray.as_ref().map(mirror),
            CameraIntrinsics { cq, ..i },
        )
    } else {
        (sample.gt.clone(), sample.gray.clone(), sample.intr)
    };
    let sparse = sample_sparse(&gt, sample.sparse.valid_count(), rng.next_u64())?;
    Sample::new(sample.name.clone(), gt, gray, sparse, intr)
}

/// Train from a fresh initialization drawn from `config.seed`.
pub fn train(samples: &[Sample], config: &TrainConfig, prop: &PropagationConfig) -> Result<TrainOutcome> {
    let model = Model::random(config.seed, prop.patch_h, prop.patch_w, prop.scale)?;
    train_from(model, samples, config, prop)
}

pub fn train_from(
    model: Model,
    samples: &[Sample],
    config: &TrainConfig,
    prop: &PropagationConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    prop.validate()?;
    if samples.is_empty() {
        return Err(Error::InvalidArgument("training needs at least one sample".into()));
    }
    model.check_config(prop)?;
    let loss = config.loss_spec();
    let mut store = model.to_store();
    let mut adam = AdamState::new(&store);
    let mut current = model;
    let mut log = Vec::with_capacity(config.epochs);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let total_updates = config.epochs * samples.len().div_ceil(config.batch_size);
    let mut update = 0;
    for epoch in 0..config.epochs {
        Rng::derive(config.seed, 1 + epoch as u64).shuffle(&mut order);
        let mut reports = Vec::with_capacity(samples.len());
        for batch in order.chunks(config.batch_size) {
            let results: Vec<Result<(LossReport, ModelGrads)>> = par::map_slice(batch, |&i| {
                let view;
                let sample = if config.augment {
                    let stream = ((1 + epoch as u64) << 32) | i as u64;
                    view = augmented(&samples[i], Rng::derive(config.seed, stream).next_u64())?;
                    &view
                } else {
                    &samples[i]
                };
                let rec = forward(&current, sample, prop, loss, None)?;
                let grads = backward(&current, &rec, BackwardHook::default());
                Ok((rec.report, grads))
            });
            let mut sum: Option<ModelGrads> = None;
            for r in results {
                let (report, grads) = r?;
                reports.push(report);
                match sum.as_mut() {
                    Some(s) => s.add_assign(&grads),
                    None => sum = Some(grads),
                }
            }
            let inv = 1.0 / batch.len() as f64;
            let mut flat = sum.expect("non-empty batch").flatten();
            flat.iter_mut().flatten().for_each(|g| *g *= inv);
            store.accumulate(&flat)?;
            let lr = config.schedule.rate(config.lr, update, total_updates);
            sgd_adam_step(&mut store, lr, &mut adam)?;
            update += 1;
            current = Model::from_store(&store)?;
        }
        log.push(mean_report(&reports));
    }
    Ok(TrainOutcome { store, log })
}
