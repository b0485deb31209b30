//! Dense f64 tensors with reverse-mode automatic differentiation.
//!
//! The module is deliberately small: a row-major [`Tensor`], a Wengert
//! [`Tape`] that records every primitive executed during a forward pass,
//! a named [`ParamStore`] holding parameters plus their gradient and
//! Adam-moment buffers, and a finite-difference [`grad_check`] harness.
//! Forward evaluation is eager; calling [`Tape::backward`] replays the
//! recorded operations in reverse and accumulates gradients, which are
//! then folded into the store with
//! [`Tape::accumulate_param_grads`].

mod optim;
mod params;
mod tape;
mod tensor;


pub use optim::{adam_step, clip_gradients, grad_check, AdamConfig, GradCheckReport, SlotReport};
pub use params::{glorot_uniform, ParamStore};
pub use tape::{recurrent_cell, CellParamIds, Tape, ValueId};
pub use tensor::Tensor;

use thiserror::Error;

/// Errors raised by tensor construction, tape operations and the optimizer.
#[derive(Debug, Error)]
pub enum DiffError {
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: expected rank-{expected} operand, got shape {shape:?}")]
    RankMismatch {
        op: &'static str,
        expected: usize,
        shape: Vec<usize>,
    },
    #[error("{op}: empty input")]
    EmptyInput { op: &'static str },
    #[error("shape {shape:?} does not match data length {len}")]
    BadShape { shape: Vec<usize>, len: usize },
    #[error("backward target must be a scalar, got shape {shape:?}")]
    NotScalar { shape: Vec<usize> },
    #[error("{op}: index {index} out of bounds (size {size})")]
    IndexOutOfBounds {
        op: &'static str,
        index: usize,
        size: usize,
    },
    #[error("unknown parameter `{0}`")]
    UnknownParam(String),
    #[error("duplicate parameter `{0}`")]
    DuplicateParam(String),
    #[error("non-finite gradient in parameter `{0}`")]
    NonFiniteGradient(String),
    #[error("gradient check evaluation produced a non-finite loss")]
    NonFiniteLoss,
}

pub type Result<T> = std::result::Result<T, DiffError>;
