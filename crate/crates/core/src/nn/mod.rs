//! Dense/graph layers, the three-layer classifier, backprop and training.

pub mod layers;
pub mod model;
pub mod train;

pub use layers::{
    activation_forward, batchnorm_forward, dense_forward, gcn_forward, log_softmax, log_softmax_nll,
    nll_logit_grad, sage_forward, BatchNormState, DropoutMask, Mode,
};
pub use model::{Arch, DnnModel, Dropout, ForwardTrace, Gradients, Linear, Propagation, Tap};
pub use train::{
    adam_step, sgd_step, train_dnn, train_dnn_with_history, AdamConfig, AdamState, EpochStats,
    OptimizerKind, TrainConfig, TrainOutcome,
};
