//! Dense tensors, parameters, and reverse-mode gradients.

mod gradcheck;
mod optim;
mod param;
mod tape;
mod tensor;

pub use gradcheck::{grad_check, GradCheckReport};
pub use optim::sgd_step;
pub use param::{Gradients, Param, ParamId, ParamStore};
pub use tape::{sigmoid, Tape, Var};

pub use tensor::Tensor;

/// Negative slope of the leaky rectifier used after crossing.
pub const LEAKY_SLOPE: f64 = 0.1;
