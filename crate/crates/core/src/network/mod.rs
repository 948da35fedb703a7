//! Quantized and binarized fully connected networks, Adam, and the step schedule.

mod layers;
mod model;
mod optim;
mod train;

pub use layers::{xnor_dot, Activation, BinFcLayer, BitMatrix, QuantFcLayer};
pub use model::{
    model_forward, param_count_for, parse_architecture, predict, Layer, Model, INPUT_THRESHOLD,
    MLP3_HIDDEN,
};
pub use optim::{adam_step, step_lr, AdamState, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};
pub use train::{EpochStats, TrainConfig, Trainer};
