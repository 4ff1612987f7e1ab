//! Multi-step graph propagation with per-step topology rebuilds.

use std::hash::Hasher;

use super::attention::{
    step_backward, step_forward, Aggregation, BackwardHook, PropagationGrads, PropagationParams, StepTrace,
};
use crate::error::{Error, Result};
use crate::geometry::{knn, knn_flat, NeighborTable, Point3};
use crate::graph::{append_positions, gather_patches, patch_positions, scatter_patches, scatter_raw, PatchLayout};
use crate::grid::{CameraIntrinsics, DepthGrid, FeatureGrid};
use crate::matrix::Matrix;

#[derive(Debug, Clone, PartialEq)]
pub struct PropagationConfig {
    pub steps: usize,
    pub k: usize,
    pub patch_h: usize,
    pub patch_w: usize,
    /// Meters per unit in MLP inputs, for both depth patches and positions.
    pub scale: f64,
    /// Overwrite observed pixels with their sparse values after every step.
    pub reimpose_sparse: bool,
    pub record_intermediate: bool,
    pub aggregation: Aggregation,
    /// Neighbors by 3D distance; when off, by distance between patch states.
    pub geometry: bool,
    /// Rebuild topology every step; when off, the first step's table is reused.
    pub dynamic: bool,
}

impl Default for PropagationConfig {
    fn default() -> Self {
        PropagationConfig {
            steps: 3,
            k: 8,
            patch_h: 4,
            patch_w: 4,
            scale: 10.0,
            reimpose_sparse: false,
            record_intermediate: false,
            aggregation: Aggregation::Attention,
            geometry: true,
            dynamic: true,
        }
    }
}

impl PropagationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::InvalidArgument("propagation needs at least one step".into()));
        }
        if self.k == 0 {
            return Err(Error::InvalidArgument("k must be at least 1".into()));
        }
        if self.patch_h == 0 || self.patch_w == 0 {
            return Err(Error::InvalidArgument("patch size must be positive".into()));
        }
        if !(self.scale > 0.0) || !self.scale.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "scale must be positive, got {}",
                self.scale
            )));
        }
        Ok(())
    }

    pub fn layout(&self, height: usize, width: usize) -> Result<PatchLayout> {
        let layout = PatchLayout::new(height, width, self.patch_h, self.patch_w)?;
        if self.k >= layout.n_nodes() {
            return Err(Error::InvalidArgument(format!(
                "k = {} needs more than {} nodes",
                self.k,
                layout.n_nodes()
            )));
        }
        Ok(layout)
    }
}

#[derive(Debug, Clone)]
pub struct PropagationOutput {
    pub depth: DepthGrid,
    /// Readout after each step (the last equals `depth`); empty unless recorded.
    pub intermediates: Vec<DepthGrid>,
}

/// Positions and topology used by one step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepGeometry {
    pub positions: Vec<Point3>,
    pub neighbors: NeighborTable,
}

#[derive(Debug, Clone)]
pub struct StepRecord {
    pub geometry: StepGeometry,
    pub trace: StepTrace,
    /// Node elements overwritten by sparse observations.
    pub reimposed: Vec<bool>,
    /// `scale · output`, with reimposed elements overwritten.
    pub state: Matrix,
    /// The state scattered to pixels, before clamping.
    pub raw_readout: Vec<f64>,
    pub readout: DepthGrid,
}

#[derive(Debug, Clone)]
pub struct PropagationTrace {
    pub layout: PatchLayout,
    pub scale: f64,
    pub steps: Vec<StepRecord>,
}

impl PropagationTrace {
    pub fn final_depth(&self) -> &DepthGrid {
        &self.steps.last().expect("at least one step").readout
    }

    pub fn geometry(&self) -> Vec<StepGeometry> {
        self.steps.iter().map(|s| s.geometry.clone()).collect()
    }

    pub fn hash_pattern<H: Hasher>(&self, h: &mut H) {
        for s in &self.steps {
            s.trace.hash_pattern(h);
        }
    }
}

fn topology(config: &PropagationConfig, state: &Matrix, positions: &[Point3]) -> Result<NeighborTable> {
    if config.geometry {
        knn(positions, config.k)
    } else {
        let flat: Vec<f64> = state.data().iter().map(|v| v / config.scale).collect();
        knn_flat(&flat, state.cols(), config.k)
    }
}

/// Run all steps from an initial node state, keeping what backward needs.
///
/// With `frozen`, each step uses the given positions and topology instead of
/// deriving them from the current depth. Gradients treat positions as
/// constants, so a frozen rerun is the function they differentiate.
#[allow(clippy::too_many_arguments)]
pub fn propagate_traced(
    initial_depth: &DepthGrid,
    initial_state: &Matrix,
    sparse: &DepthGrid,
    intr: &CameraIntrinsics,
    params: &PropagationParams,
    config: &PropagationConfig,
    frozen: Option<&[StepGeometry]>,
) -> Result<PropagationTrace> {
    config.validate()?;
    let layout = config.layout(initial_depth.height(), initial_depth.width())?;
    initial_depth.check_same_shape(sparse, "sparse input vs initial depth")?;
    if initial_state.rows() != layout.n_nodes() || initial_state.cols() != layout.patch_len() {
        return Err(Error::Shape("initial node state does not match layout".into()));
    }
    params.check_widths(layout.feature_len())?;
    if let Some(f) = frozen {
        if f.len() != config.steps {
            return Err(Error::Shape(format!(
                "frozen geometry has {} steps, config has {}",
                f.len(),
                config.steps
            )));
        }
    }

    let reimposed: Vec<bool> = if config.reimpose_sparse {
        (0..layout.n_nodes() * layout.patch_len())
            .map(|e| sparse.values()[layout.pixel_of(e / layout.patch_len(), e % layout.patch_len())] > 0.0)
            .collect()
    } else {
        vec![false; layout.n_nodes() * layout.patch_len()]
    };

    let mut state = initial_state.clone();
    let mut positions = patch_positions(initial_depth, &layout, intr)?;
    let mut steps: Vec<StepRecord> = Vec::with_capacity(config.steps);
    for s in 0..config.steps {
        let geometry = match frozen {
            Some(f) => f[s].clone(),
            None => {
                let neighbors = match steps.first() {
                    Some(first) if !config.dynamic => first.geometry.neighbors.clone(),
                    _ => topology(config, &state, &positions)?,
                };
                StepGeometry {
                    positions: positions.clone(),
                    neighbors,
                }
            }
        };
        let scaled = Matrix::from_vec(
            state.rows(),
            state.cols(),
            state.data().iter().map(|v| v / config.scale).collect(),
        )?;
        let features = append_positions(&scaled, &geometry.positions, config.scale)?;
        let trace = step_forward(&features, &geometry.neighbors, params, config.aggregation)?;

        let mut next = Matrix::from_vec(
            state.rows(),
            state.cols(),
            trace.output.data().iter().map(|v| v * config.scale).collect(),
        )?;
        for (e, v) in next.data_mut().iter_mut().enumerate() {
            if reimposed[e] {
                let (n, l) = (e / layout.patch_len(), e % layout.patch_len());
                *v = sparse.values()[layout.pixel_of(n, l)];
            }
        }
        if !next.is_finite() {
            return Err(Error::NonFinite { index: s });
        }
        let raw_readout = scatter_raw(&next, &layout)?;
        let readout = scatter_patches(&next, &layout)?;
        positions = patch_positions(&readout, &layout, intr)?;
        state = next;
        steps.push(StepRecord {
            geometry,
            trace,
            reimposed: reimposed.clone(),
            state: state.clone(),
            raw_readout,
            readout,
        });
    }
    Ok(PropagationTrace {
        layout,
        scale: config.scale,
        steps,
    })
}

/// Backward through every step.
///
/// `d_readouts[s]` is the loss gradient with respect to step `s`'s unclamped
/// readout (pixel grid, row-major); missing or empty entries count as zero. Returns
/// parameter gradients and the gradient with respect to the initial node
/// state.
pub fn backward_traced(
    trace: &PropagationTrace,
    params: &PropagationParams,
    d_readouts: &[Vec<f64>],
    hook: BackwardHook,
) -> (PropagationGrads, Matrix) {
    let layout = trace.layout;
    let (n, c) = (layout.n_nodes(), layout.patch_len());
    let mut grads = params.zero_grad();
    let to_nodes = |d: &[f64], acc: &mut Matrix| {
        if d.is_empty() {
            return;
        }
        for node in 0..n {
            for l in 0..c {
                let v = acc.get(node, l) + d[layout.pixel_of(node, l)];
                acc.set(node, l, v);
            }
        }
    };
    let mut d_state = Matrix::zeros(n, c);
    for s in (0..trace.steps.len()).rev() {
        if let Some(d) = d_readouts.get(s) {
            to_nodes(d, &mut d_state);
        }
        let rec = &trace.steps[s];
        let mut d_out = Matrix::zeros(n, c);
        for (e, slot) in d_out.data_mut().iter_mut().enumerate() {
            if !rec.reimposed[e] {
                *slot = d_state.data()[e] * trace.scale;
            }
        }
        let dx = step_backward(&rec.trace, params, &d_out, &mut grads, hook);
        let mut prev = Matrix::zeros(n, c);
        for node in 0..n {
            for l in 0..c {
                prev.set(node, l, dx.get(node, l) / trace.scale);
            }
        }
        d_state = prev;
    }
    (grads, d_state)
}

/// Refine `initial_depth` using node features gathered from `features`.
pub fn propagate(
    initial_depth: &DepthGrid,
    features: &FeatureGrid,
    sparse: &DepthGrid,
    intr: &CameraIntrinsics,
    params: &PropagationParams,
    config: &PropagationConfig,
) -> Result<PropagationOutput> {
    config.validate()?;
    let layout = config.layout(initial_depth.height(), initial_depth.width())?;
    let state = gather_patches(features, &layout)?;
    let trace = propagate_traced(initial_depth, &state, sparse, intr, params, config, None)?;
    let intermediates = if config.record_intermediate {
        trace.steps.iter().map(|s| s.readout.clone()).collect()
    } else {
        Vec::new()
    };
    Ok(PropagationOutput {
        depth: trace.final_depth().clone(),
        intermediates,
    })
}
