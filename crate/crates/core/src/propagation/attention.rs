//! Channel-wise edge attention over a node's neighbors plus itself.
//!
//! For node `i` with neighbor set `N(i)`:
//!
//! ```text
//! logit_ij = ψ(x_i ‖ x_j)                       j ∈ N(i) ∪ {i}
//! α_ij     = softmax_j(logit_ij)                 per channel
//! x_i'     = α_ii ⊙ φ_self(x_i) + Σ_j α_ij ⊙ φ_nbr(x_i ‖ (x_j − x_i))
//! ```
//!
//! Neighbor slots are ordered by ascending node index and the self slot is
//! last. Sums run in slot order, so results do not depend on scheduling.

use std::hash::Hasher;

use super::mlp::{MlpGrad, MlpSpec, MlpTrace};
use crate::error::{Error, Result};
use crate::geometry::NeighborTable;
use crate::graph::PatchGraph;
use crate::matrix::Matrix;
use crate::rng::Rng;

/// Hidden width of the three propagation MLPs.
pub const HIDDEN_WIDTH: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Aggregation {
    /// Learned softmax weights from ψ.
    Attention,
    /// Uniform `1/(k+1)` weights; ψ is unused.
    Mean,
}

/// The learnable part of the propagation step.
#[derive(Debug, Clone, PartialEq)]
pub struct PropagationParams {
    pub psi: MlpSpec,
    pub phi_self: MlpSpec,
    pub phi_nbr: MlpSpec,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PropagationGrads {
    pub psi: MlpGrad,
    pub phi_self: MlpGrad,
    pub phi_nbr: MlpGrad,
}

impl PropagationGrads {
    pub fn add_assign(&mut self, other: &PropagationGrads) {
        self.psi.add_assign(&other.psi);
        self.phi_self.add_assign(&other.phi_self);
        self.phi_nbr.add_assign(&other.phi_nbr);
    }
}

impl PropagationParams {
    /// Fresh parameters for patches of `patch_len` elements (node features of
    /// length `patch_len + 3`).
    pub fn random(patch_len: usize, rng: &mut Rng) -> Result<Self> {
        let l = patch_len + 3;
        Ok(PropagationParams {
            psi: MlpSpec::random(&[2 * l, HIDDEN_WIDTH, patch_len], rng)?,
            phi_self: MlpSpec::random(&[l, HIDDEN_WIDTH, patch_len], rng)?,
            phi_nbr: MlpSpec::random(&[2 * l, HIDDEN_WIDTH, patch_len], rng)?,
        })
    }

    pub fn zero_grad(&self) -> PropagationGrads {
        PropagationGrads {
            psi: self.psi.zero_grad(),
            phi_self: self.phi_self.zero_grad(),
            phi_nbr: self.phi_nbr.zero_grad(),
        }
    }

    pub fn patch_len(&self) -> usize {
        self.phi_self.output_width()
    }

    /// Check the MLP widths against node feature length `l`.
    pub fn check_widths(&self, l: usize) -> Result<()> {
        let c = l
            .checked_sub(3)
            .ok_or_else(|| Error::Shape("feature length below 3".into()))?;
        check_mlp(&self.psi, 2 * l, c, "psi")?;
        check_mlp(&self.phi_self, l, c, "phi_self")?;
        check_mlp(&self.phi_nbr, 2 * l, c, "phi_nbr")
    }
}

fn check_mlp(m: &MlpSpec, input: usize, output: usize, name: &str) -> Result<()> {
    if m.input_width() != input || m.output_width() != output {
        return Err(Error::Shape(format!(
            "{name} maps {}->{}, expected {input}->{output}",
            m.input_width(),
            m.output_width()
        )));
    }
    Ok(())
}

/// Attention weights for every node: `(k+1) × C` per node, self slot last.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionTensor {
    n_nodes: usize,
    k: usize,
    channels: usize,
    coeffs: Vec<f64>,
}

impl AttentionTensor {
    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    /// Coefficient of slot `slot` (neighbors `0..k` by ascending index, self at `k`).
    #[inline]
    pub fn get(&self, node: usize, slot: usize, channel: usize) -> f64 {
        self.coeffs[(node * (self.k + 1) + slot) * self.channels + channel]
    }

    pub fn self_coeff(&self, node: usize, channel: usize) -> f64 {
        self.get(node, self.k, channel)
    }

    /// Largest deviation from 1 of any per-channel column sum.
    pub fn max_normalization_error(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..self.n_nodes {
            for c in 0..self.channels {
                let s: f64 = (0..=self.k).map(|s| self.get(i, s, c)).sum();
                worst = worst.max((s - 1.0).abs());
            }
        }
        worst
    }

    pub fn values(&self) -> &[f64] {
        &self.coeffs
    }
}

/// Softmax over the `k+1` slots of each channel, max-subtracted.
pub fn softmax_slots(logits: &[f64], slots: usize, channels: usize) -> Vec<f64> {
    let mut out = vec![0.0; logits.len()];
    for c in 0..channels {
        let m = (0..slots)
            .map(|s| logits[s * channels + c])
            .fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for s in 0..slots {
            let e = (logits[s * channels + c] - m).exp();
            out[s * channels + c] = e;
            z += e;
        }
        for s in 0..slots {
            out[s * channels + c] /= z;
        }
    }
    out
}

/// Everything the backward pass needs from one propagation step.
#[derive(Debug, Clone)]
pub struct StepTrace {
    pub slots: Vec<Vec<usize>>,
    pub k: usize,
    pub channels: usize,
    pub aggregation: Aggregation,
    pub psi: Option<MlpTrace>,
    pub phi_self: MlpTrace,
    pub phi_nbr: MlpTrace,
    pub alpha: AttentionTensor,
    pub output: Matrix,
}

impl StepTrace {
    pub fn hash_pattern<H: Hasher>(&self, h: &mut H) {
        if let Some(p) = &self.psi {
            p.hash_pattern(h);
        }
        self.phi_self.hash_pattern(h);
        self.phi_nbr.hash_pattern(h);
    }
}

/// Test-only corruption switches for the backward pass.
#[doc(hidden)]
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct BackwardHook {
    /// Drop the `-Σ α·dα` term of the softmax Jacobian.
    pub drop_softmax_centering: bool,
}

fn sorted_slots(neighbors: &NeighborTable) -> Vec<Vec<usize>> {
    (0..neighbors.n_nodes()).map(|i| neighbors.row_by_index(i)).collect()
}

fn pair_inputs(x: &Matrix, slots: &[Vec<usize>], with_self: bool, diff: bool) -> Matrix {
    let l = x.cols();
    let per = slots.first().map_or(0, |s| s.len()) + usize::from(with_self);
    let mut m = Matrix::zeros(slots.len() * per, 2 * l);
    for (i, nb) in slots.iter().enumerate() {
        let xi = x.row(i);
        let targets = nb.iter().copied().chain(with_self.then_some(i));
        for (s, j) in targets.enumerate() {
            let row = m.row_mut(i * per + s);
            row[..l].copy_from_slice(xi);
            let xj = x.row(j);
            for t in 0..l {
                row[l + t] = if diff { xj[t] - xi[t] } else { xj[t] };
            }
        }
    }
    m
}

fn check_graph_inputs(features: &Matrix, neighbors: &NeighborTable) -> Result<()> {
    if neighbors.n_nodes() != features.rows() {
        return Err(Error::Shape(format!(
            "{} feature rows but {} neighbor rows",
            features.rows(),
            neighbors.n_nodes()
        )));
    }
    Ok(())
}

/// One edge-attention step on raw node features.
pub fn step_forward(
    features: &Matrix,
    neighbors: &NeighborTable,
    params: &PropagationParams,
    aggregation: Aggregation,
) -> Result<StepTrace> {
    check_graph_inputs(features, neighbors)?;
    params.check_widths(features.cols())?;
    let n = features.rows();
    let k = neighbors.k();
    let c = params.patch_len();
    let slots = sorted_slots(neighbors);

    let (psi, coeffs) = match aggregation {
        Aggregation::Attention => {
            let t = params.psi.forward_batch(&pair_inputs(features, &slots, true, false))?;
            let per = (k + 1) * c;
            let mut coeffs = Vec::with_capacity(n * per);
            for i in 0..n {
                coeffs.extend(softmax_slots(&t.output.data()[i * per..(i + 1) * per], k + 1, c));
            }
            (Some(t), coeffs)
        }
        Aggregation::Mean => (None, vec![1.0 / (k + 1) as f64; n * (k + 1) * c]),
    };
    let alpha = AttentionTensor {
        n_nodes: n,
        k,
        channels: c,
        coeffs,
    };

    let phi_self = params.phi_self.forward_batch(features)?;
    let phi_nbr = params
        .phi_nbr
        .forward_batch(&pair_inputs(features, &slots, false, true))?;

    let mut output = Matrix::zeros(n, c);
    for i in 0..n {
        let row = output.row_mut(i);
        let own = phi_self.output.row(i);
        for ch in 0..c {
            let mut acc = alpha.self_coeff(i, ch) * own[ch];
            for s in 0..k {
                acc += alpha.get(i, s, ch) * phi_nbr.output.get(i * k + s, ch);
            }
            row[ch] = acc;
        }
    }
    Ok(StepTrace {
        slots,
        k,
        channels: c,
        aggregation,
        psi,
        phi_self,
        phi_nbr,
        alpha,
        output,
    })
}

/// Backward through [`step_forward`]. Returns the gradient with respect to
/// the full node features (`N × L`).
pub fn step_backward(
    trace: &StepTrace,
    params: &PropagationParams,
    d_output: &Matrix,
    grads: &mut PropagationGrads,
    hook: BackwardHook,
) -> Matrix {
    let n = trace.output.rows();
    let (k, c) = (trace.k, trace.channels);
    let l = trace.phi_self.acts[0].cols();
    let alpha = &trace.alpha;

    let mut d_self = Matrix::zeros(n, c);
    let mut d_nbr = Matrix::zeros(n * k, c);
    let mut d_logits = Matrix::zeros(n * (k + 1), c);
    for i in 0..n {
        let g = d_output.row(i);
        for ch in 0..c {
            let a_self = alpha.self_coeff(i, ch);
            d_self.set(i, ch, g[ch] * a_self);
            for s in 0..k {
                d_nbr.set(i * k + s, ch, g[ch] * alpha.get(i, s, ch));
            }
            if trace.aggregation == Aggregation::Attention {
                // dα for each slot, then the softmax Jacobian.
                let d_alpha = |s: usize| {
                    let f = if s == k {
                        trace.phi_self.output.get(i, ch)
                    } else {
                        trace.phi_nbr.output.get(i * k + s, ch)
                    };
                    g[ch] * f
                };
                let centre: f64 = (0..=k).map(|s| alpha.get(i, s, ch) * d_alpha(s)).sum();
                for s in 0..=k {
                    let centred = if hook.drop_softmax_centering {
                        d_alpha(s)
                    } else {
                        d_alpha(s) - centre
                    };
                    d_logits.set(i * (k + 1) + s, ch, alpha.get(i, s, ch) * centred);
                }
            }
        }
    }

    let mut dx = Matrix::zeros(n, l);
    let d_self_in = params
        .phi_self
        .backward_batch(&trace.phi_self, &d_self, &mut grads.phi_self);
    let d_nbr_in = params
        .phi_nbr
        .backward_batch(&trace.phi_nbr, &d_nbr, &mut grads.phi_nbr);
    let d_psi_in = trace
        .psi
        .as_ref()
        .map(|t| params.psi.backward_batch(t, &d_logits, &mut grads.psi));

    for i in 0..n {
        for t in 0..l {
            let v = dx.get(i, t) + d_self_in.get(i, t);
            dx.set(i, t, v);
        }
        for (s, &j) in trace.slots[i].iter().enumerate() {
            let r = d_nbr_in.row(i * k + s);
            for t in 0..l {
                // input is (x_i ‖ x_j − x_i)
                let (a, b) = (r[t], r[l + t]);
                let vi = dx.get(i, t) + a - b;
                dx.set(i, t, vi);
                let vj = dx.get(j, t) + b;
                dx.set(j, t, vj);
            }
        }
        if let Some(dp) = &d_psi_in {
            let targets = trace.slots[i].iter().copied().chain(std::iter::once(i));
            for (s, j) in targets.enumerate() {
                let r = dp.row(i * (k + 1) + s);
                for t in 0..l {
                    let vi = dx.get(i, t) + r[t];
                    dx.set(i, t, vi);
                    let vj = dx.get(j, t) + r[l + t];
                    dx.set(j, t, vj);
                }
            }
        }
    }
    dx
}

pub fn attention_coefficients(graph: &PatchGraph, psi: &MlpSpec) -> Result<AttentionTensor> {
    let l = graph.feature_len();
    check_mlp(psi, 2 * l, l - 3, "psi")?;
    let slots = sorted_slots(&graph.neighbors);
    let k = graph.neighbors.k();
    let c = l - 3;
    let t = psi.forward_batch(&pair_inputs(&graph.features, &slots, true, false))?;
    let per = (k + 1) * c;
    let mut coeffs = Vec::with_capacity(graph.n_nodes() * per);
    for i in 0..graph.n_nodes() {
        coeffs.extend(softmax_slots(&t.output.data()[i * per..(i + 1) * per], k + 1, c));
    }
    Ok(AttentionTensor {
        n_nodes: graph.n_nodes(),
        k,
        channels: c,
        coeffs,
    })
}

/// New patch part of every node after one attention-weighted aggregation.
pub fn edge_attention_step(graph: &PatchGraph, phi_self: &MlpSpec, phi_nbr: &MlpSpec, psi: &MlpSpec) -> Result<Matrix> {
    let params = PropagationParams {
        psi: psi.clone(),
        phi_self: phi_self.clone(),
        phi_nbr: phi_nbr.clone(),
    };
    Ok(step_forward(&graph.features, &graph.neighbors, &params, Aggregation::Attention)?.output)
}
