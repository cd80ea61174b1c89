//! Minimal reverse-mode automatic differentiation over dense tensors.
//!
//! The engine records every operation of a forward pass on a [`Tape`],
//! then propagates gradients back in one reverse sweep. Everything is generic
//! over [`Real`] so the same program can run in `f32` for training and in
//! `f64` for finite-difference checks.

pub mod checkpoint;
mod error;
pub mod opcheck;
pub mod gradcheck;
pub mod optim;
pub mod params;
pub mod real;
pub mod tape;
pub mod tensor;

pub use checkpoint::{Checkpoint, CheckpointError};
pub use error::{AutodiffError, Result};
pub use gradcheck::{grad_check, grad_check_with, GradCheckOptions, GradCheckReport};
pub use optim::{OptimizerConfig, OptimizerKind, OptimizerState};
pub use params::{Bound, GradMap, ParamStore};
pub use real::Real;
pub use tape::{Gradients, OpSpec, Tape, Var};
pub use tensor::Tensor;
