//! Forward and reverse passes through initializer, propagation and loss.

use std::hash::Hasher;

use super::initializer::{idw_fill, initializer_backward, initializer_forward_traced, InitializerTrace};
use super::loss::{loss_with_gradients_raw, LossKind, LossReport};
use super::model::{Model, ModelGrads};
use crate::error::{Error, Result};
use crate::graph::gather_patches;
use crate::grid::{CameraIntrinsics, DepthGrid};
use crate::propagation::{
    backward_traced, propagate, propagate_traced, BackwardHook, PropagationConfig, PropagationOutput, PropagationTrace,
    StepGeometry,
};

/// One training or evaluation sample with its inverse-distance fill cached.
#[derive(Debug, Clone)]
pub struct Sample {
    pub name: String,
    pub gt: DepthGrid,
    pub gray: Option<DepthGrid>,
    pub sparse: DepthGrid,
    pub intr: CameraIntrinsics,
    pub initial: DepthGrid,
}

impl Sample {
    pub fn new(
        name: impl Into<String>,
        gt: DepthGrid,
        gray: Option<DepthGrid>,
        sparse: DepthGrid,
        intr: CameraIntrinsics,
    ) -> Result<Self> {
        gt.check_same_shape(&sparse, "sparse input vs ground truth")?;
        if let Some(g) = &gray {
            gt.check_same_shape(g, "guidance vs ground truth")?;
        }
        let initial = idw_fill(&sparse)?;
        Ok(Sample {
            name: name.into(),
            gt,
            gray,
            sparse,
            intr,
            initial,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossSpec {
    pub kind: LossKind,
    /// Weight of each step's auxiliary readout loss.
    pub aux_weight: f64,
}

impl Default for LossSpec {
    fn default() -> Self {
        LossSpec {
            kind: LossKind::L1,
            aux_weight: 0.1,
        }
    }
}

/// Everything a forward pass keeps for backward.
#[derive(Debug, Clone)]
pub struct ForwardRecord {
    pub init: InitializerTrace,
    pub prop: PropagationTrace,
    pub report: LossReport,
    d_readouts: Vec<Vec<f64>>,
    residual_pieces: Vec<u8>,
}

impl ForwardRecord {
    pub fn prediction(&self) -> &DepthGrid {
        self.prop.final_depth()
    }

    /// Hash of every piecewise-linear branch taken; equal hashes mean two
    /// runs lie on the same smooth piece of the loss.
    pub fn pattern_hash(&self) -> u64 {
        let mut h = std::collections::hash_map::DefaultHasher::new();
        self.init.hash_pattern(&mut h);
        self.prop.hash_pattern(&mut h);
        h.write(&self.residual_pieces);
        h.finish()
    }
}

/// Forward pass with loss.
///
/// The loss sees each step's readout before the non-negativity clamp, so
/// pixels pushed below zero still get a gradient back toward the ground
/// truth. The auxiliary terms cover every step, the last one included.
pub fn forward(
    model: &Model,
    sample: &Sample,
    config: &PropagationConfig,
    loss: LossSpec,
    frozen: Option<&[StepGeometry]>,
) -> Result<ForwardRecord> {
    model.check_config(config)?;
    let (features, init) =
        initializer_forward_traced(&sample.initial, &sample.sparse, sample.gray.as_ref(), &model.init)?;
    let layout = config.layout(features.height(), features.width())?;
    let state = gather_patches(&features, &layout)?;
    let prop = propagate_traced(
        &sample.initial,
        &state,
        &sample.sparse,
        &sample.intr,
        &model.prop,
        config,
        frozen,
    )?;
    let readouts: Vec<&[f64]> = prop.steps.iter().map(|s| s.raw_readout.as_slice()).collect();
    let last = *readouts.last().expect("at least one step");
    let (report, grads) = loss_with_gradients_raw(last, &readouts, &sample.gt, loss.aux_weight, loss.kind)?;
    let mut d_readouts = grads.d_intermediates;
    let last = d_readouts.last_mut().expect("at least one step");
    last.iter_mut().zip(&grads.d_final).for_each(|(a, b)| *a += b);
    let mut residual_pieces = Vec::with_capacity(readouts.len() * sample.gt.len());
    for r in &readouts {
        for (&p, &g) in r.iter().zip(sample.gt.values()) {
            residual_pieces.push(if g > 0.0 { loss.kind.piece(p - g) } else { 0 });
        }
    }
    Ok(ForwardRecord {
        init,
        prop,
        report,
        d_readouts,
        residual_pieces,
    })
}

/// Final depth for `sample` without computing a loss; `gt` is not read.
pub fn predict(model: &Model, sample: &Sample, config: &PropagationConfig) -> Result<PropagationOutput> {
    model.check_config(config)?;
    let (features, _) = initializer_forward_traced(&sample.initial, &sample.sparse, sample.gray.as_ref(), &model.init)?;
    propagate(
        &sample.initial,
        &features,
        &sample.sparse,
        &sample.intr,
        &model.prop,
        config,
    )
}

/// Gradient of the recorded total loss with respect to every parameter.
pub fn backward(model: &Model, record: &ForwardRecord, hook: BackwardHook) -> ModelGrads {
    let (prop_grads, d_state) = backward_traced(&record.prop, &model.prop, &record.d_readouts, hook);
    let layout = record.prop.layout;
    let c = layout.patch_len();
    let mut d_features = vec![0.0; layout.height() * layout.width() * c];
    for n in 0..layout.n_nodes() {
        for l in 0..c {
            d_features[layout.pixel_of(n, l) * c + l] += d_state.get(n, l);
        }
    }
    let mut init_grads = model.init.zero_grad();
    initializer_backward(&model.init, &record.init, &d_features, &mut init_grads);
    ModelGrads {
        init: init_grads,
        prop: prop_grads,
    }
}

/// Stateful forward/backward pair that writes gradients into a store.
#[derive(Debug)]
pub struct Pipeline<'m> {
    model: &'m Model,
    config: PropagationConfig,
    loss: LossSpec,
    hook: BackwardHook,
    record: Option<ForwardRecord>,
}

impl<'m> Pipeline<'m> {
    pub fn new(model: &'m Model, config: PropagationConfig, loss: LossSpec) -> Self {
        Pipeline {
            model,
            config,
            loss,
            hook: BackwardHook::default(),
            record: None,
        }
    }

    pub fn with_hook(mut self, hook: BackwardHook) -> Self {
        self.hook = hook;
        self
    }

    pub fn forward(&mut self, sample: &Sample) -> Result<LossReport> {
        let rec = forward(self.model, sample, &self.config, self.loss, None)?;
        let report = rec.report.clone();
        self.record = Some(rec);
        Ok(report)
    }

    /// Accumulate gradients of the last forward pass into `store`, which
    /// must be laid out like the model's own store.
    pub fn backward(&mut self, store: &mut super::params::ParamStore) -> Result<()> {
        let rec = self.record.take().ok_or(Error::BackwardBeforeForward)?;
        let grads = backward(self.model, &rec, self.hook);
        store.accumulate(&grads.flatten())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    pub(crate) fn tiny_sample(seed: u64) -> Sample {
        let mut rng = Rng::new(seed);
        let (h, w) = (8, 8);
        let gt: Vec<f64> = (0..h * w)
            .map(|i| {
                if i % 11 == 3 {
                    0.0
                } else {
                    2.0 + 0.1 * (i / w) as f64 + rng.uniform(0.0, 0.3)
                }
            })
            .collect();
        let gt = DepthGrid::new(h, w, gt).unwrap();
        let sparse: Vec<f64> = gt
            .values()
            .iter()
            .enumerate()
            .map(|(i, &v)| if i % 5 == 0 { v } else { 0.0 })
            .collect();
        let gray = DepthGrid::new(h, w, (0..h * w).map(|_| rng.next_f64()).collect()).unwrap();
        Sample::new(
            "tiny",
            gt,
            Some(gray),
            DepthGrid::new(h, w, sparse).unwrap(),
            CameraIntrinsics::centered(h, w, 6.0),
        )
        .unwrap()
    }

    fn tiny_config() -> PropagationConfig {
        PropagationConfig {
            steps: 2,
            k: 4,
            patch_h: 2,
            patch_w: 2,
            ..PropagationConfig::default()
        }
    }

    #[test]
    fn backward_before_forward_is_an_error() {
        let model = Model::random(0, 2, 2, 10.0).unwrap();
        let mut store = model.to_store();
        let mut p = Pipeline::new(&model, tiny_config(), LossSpec::default());
        assert!(matches!(p.backward(&mut store), Err(Error::BackwardBeforeForward)));
        p.forward(&tiny_sample(1)).unwrap();
        p.backward(&mut store).unwrap();
        assert!(store
            .grad(store.index_of("prop.psi.0.weight").unwrap())
            .iter()
            .any(|&g| g != 0.0));
        assert!(matches!(p.backward(&mut store), Err(Error::BackwardBeforeForward)));
    }

    #[test]
    fn report_matches_prediction() {
        let model = Model::random(3, 2, 2, 10.0).unwrap();
        let s = tiny_sample(2);
        let rec = forward(&model, &s, &tiny_config(), LossSpec::default(), None).unwrap();
        let raw = &rec.prop.steps[1].raw_readout;
        let main = super::super::loss::masked_loss_raw(LossKind::L1, raw, &s.gt).unwrap().0;
        assert_eq!(rec.report.main, main);
        let clamped = super::super::loss::masked_l1(rec.prediction(), &s.gt).unwrap();
        assert!(clamped <= main);
        assert_eq!(rec.report.auxiliary.len(), 2);
        assert_eq!(rec.report.valid_count, s.gt.valid_count());
    }

    #[test]
    fn predict_matches_forward() {
        let model = Model::random(8, 2, 2, 10.0).unwrap();
        let s = tiny_sample(4);
        let rec = forward(&model, &s, &tiny_config(), LossSpec::default(), None).unwrap();
        let out = predict(&model, &s, &tiny_config()).unwrap();
        assert_eq!(&out.depth, rec.prediction());
    }

    #[test]
    fn mismatched_model_rejected() {
        let model = Model::random(3, 4, 4, 10.0).unwrap();
        assert!(forward(&model, &tiny_sample(2), &tiny_config(), LossSpec::default(), None).is_err());
    }
}
