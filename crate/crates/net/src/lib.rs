//! Trainable networks for volumetric motion estimation and sequential
//! interpolation, built on a small reverse-mode autodiff tape.
//!
//! The motion network registers two volumes and emits displacement fields
//! at three scales; the interpolation network refines closed-form
//! intermediate fields into per-scale intermediate volumes with a learned
//! blend-weight map and a phase-regression head. Training is plain Adam
//! over f32 master weights with statelessly derived per-step RNG, so fixed
//! seeds reproduce loss histories bitwise and checkpoints resume exactly.

pub mod backbone;
pub mod checkpoint;
pub mod elem;
pub mod error;
pub mod graph;
pub mod interp;
pub mod kernels;
pub mod motion;
pub mod params;
pub mod train;

pub use elem::Element;
pub use error::{NetError, Result};
pub use graph::Graph;
pub use interp::{
    infer_sequence, interp_forward, loss_bidirectional, loss_regression, loss_similar,
    loss_total, precompute_fields, regression_forward, train_interp, InterpConfig, InterpNet,
    InterpOutput, InterpStepLoss, InterpTrainer, LossParts, LossWeights, SampleFields,
};
pub use motion::{
    motion_forward, similarity_loss, smoothness_loss, train_motion, MotionConfig, MotionNet,
    MotionStepLoss, MotionTrainer,
};
pub use params::{Adam, ParamBlock, ParamSet};
pub use train::TrainOptions;
