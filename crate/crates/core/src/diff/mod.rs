//! Reverse-mode differentiation over dense matrices, the optimizer and the
//! learning-rate schedule used to train every model in the crate.

mod gradcheck;
mod optim;
mod params;
mod rng;
mod tape;
mod tensor;

pub use gradcheck::{grad_check, grad_check_multi, GradCheckReport};
pub use optim::{adamw_step, clip_grad_norm, lr_schedule, AdamW, OptimizerState};
pub use params::{read_checkpoint, write_checkpoint, Checkpoint, ParamId, ParamStore};
pub use rng::{derive_seed, stream_rng, StreamRng};
pub use tape::{log_sum_exp, sigmoid, softmax, softmax_into, BatchStats, Gradients, Tape, Var};
pub use tensor::{argmax, Tensor};

#[derive(Debug, thiserror::Error)]
pub enum DiffError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("numeric error in {op}: {detail}")]
    Numeric { op: &'static str, detail: String },
    #[error("invalid parameter: {0}")]
    Param(String),
    #[error("non-finite gradient for parameter {name}")]
    NonFiniteGrad { name: String },
}
