//! Dense fp64 tensors with tape-based reverse-mode differentiation.

mod gradcheck;
mod params;
mod tape;
mod tensor;

pub use gradcheck::{grad_check, grad_check_inputs, GradCheckReport};
pub use params::{ParamGrad, ParamGrads, ParamId, ParameterStore};
pub use tape::{pair_probability, Gradients, PoolKind, Tape, Var};
pub use tensor::{SparseVector, Tensor};

#[cfg(test)]
mod tests;
