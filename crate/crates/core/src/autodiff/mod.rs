//! Dense reverse-mode automatic differentiation.

pub mod gradcheck;
pub mod optim;
mod scalar;
mod tape;
mod tensor;

pub use gradcheck::{grad_check, GradCheckReport};
pub use optim::{clip_weights, sgd_step, Adam, Direction};
pub use scalar::{Dual, Real};
pub use tape::{BatchStats, Tape, Var, BATCH_NORM_EPS};
pub use tensor::Tensor;

#[cfg(test)]
mod tests;
