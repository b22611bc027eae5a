//! Dense tensors and reverse-mode differentiation.

mod array;
mod gemm;
mod gradcheck;
mod graph;
mod params;
mod tape;

pub use array::Tensor;
pub use gradcheck::{grad_check, grad_check_params, relative_error, GradCheckReport};
pub use graph::{Graph, Mode};
pub use params::{Buffer, BufferId, ParamId, ParamStore, Parameter};
pub use tape::{softmax_values, Activation, Reduction, Tape, Var};

#[allow(unused_imports)]
pub(crate) use array::split_axis;
#[allow(unused_imports)]
pub(crate) use graph::dropout_mask;

/// Batch-norm epsilon.
pub const BN_EPS: f64 = 1e-5;
/// Batch-norm running-statistics momentum.
pub const BN_MOMENTUM: f64 = 0.1;
/// Layer-norm epsilon.
pub const LN_EPS: f64 = 1e-5;

#[cfg(test)]
mod tests;
