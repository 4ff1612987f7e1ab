//! Propagation engines: the fixed 3×3 local update and the graph step with
//! edge attention and dynamic topology.

mod attention;
mod cspn;
mod engine;
mod mlp;

pub use attention::{
    attention_coefficients, edge_attention_step, softmax_slots, step_backward, step_forward, Aggregation,
    AttentionTensor, BackwardHook, PropagationGrads, PropagationParams, StepTrace, HIDDEN_WIDTH,
};
pub use cspn::{cspn_step, kernel_slot, AffinityKernelField, SELF_SLOT};
pub use engine::{
    backward_traced, propagate, propagate_traced, PropagationConfig, PropagationOutput, PropagationTrace, StepGeometry,
    StepRecord,
};
pub use mlp::{Activation, MlpGrad, MlpSpec, MlpTrace};
