//! Hand-written reverse-mode training: losses, the residual initializer,
//! gradients through the whole pipeline, Adam, checkpoints and a
//! finite-difference verifier.

mod adam;
mod conv;
mod gradcheck;
mod initializer;
mod loss;
mod model;
mod params;
mod pipeline;
mod train;

pub use adam::{sgd_adam_step, AdamState, BETA1, BETA2, EPSILON};
pub use conv::{Conv3x3, ConvGrad};
pub use gradcheck::{central_difference, gradcheck, relative_error, GradCheckOptions, GradCheckReport, GroupReport};
pub use initializer::{
    idw_fill, initializer_backward, initializer_forward, initializer_forward_traced, Initializer, InitializerGrads,
    InitializerTrace, HIDDEN_CHANNELS, IDW_NEIGHBORS, INPUT_CHANNELS,
};
pub use loss::{
    loss_with_auxiliary, loss_with_gradients, loss_with_gradients_raw, masked_l1, masked_loss, masked_loss_raw,
    LossGradients, LossKind, LossReport,
};
pub use model::{Model, ModelGrads};
pub use params::{ParamStore, Tensor, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use pipeline::{backward, forward, predict, ForwardRecord, LossSpec, Pipeline, Sample};
pub use train::{train, train_from, LrSchedule, TrainConfig, TrainOutcome};
