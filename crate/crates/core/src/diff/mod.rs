//! Minimal differentiable computation core: dense tensors, a reverse-mode
//! tape, Adam and learning-rate schedules.
//!
//! The encoders and losses are generic over [`Real`] so the same code runs in
//! `f32` for training and in `f64` for finite-difference checks.

mod gradcheck;
pub mod init;
mod optim;
mod params;
mod tape;
mod tensor;

pub use gradcheck::{check_gradients, check_param_gradients, check_param_gradients_subset};
pub use optim::{Adam, AdamConfig, LrSchedule};
pub use params::{Gradients, ParamId, ParamStore};
pub use tape::{Tape, Var};
pub use tensor::{Real, Tensor};

pub(crate) use tape::softmax_in_place;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DiffError {
    #[error("{op}: shape mismatch: {detail}")]
    Shape { op: &'static str, detail: String },
    #[error("{op}: produced a non-finite value")]
    NonFinite { op: &'static str },
    #[error("non-finite gradient for parameter `{param}`")]
    NonFiniteGradient { param: String },
    #[error("tape state: {0}")]
    State(String),
    #[error("invalid argument: {0}")]
    Argument(String),
}
