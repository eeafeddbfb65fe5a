//! DeepCross: an explainable attentive feature-crossing network for rating
//! entities from sequences of tabular records.
//!
//! The numeric core is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! at the bottom of this file fix the common choices.

pub mod attention;
pub mod baselines;
pub mod checkpoint;
pub mod crossing;
pub mod data;
pub mod embedding;
pub mod error;
pub mod explain;
pub mod head;
pub mod metrics;
pub mod model;
pub mod numerics;
pub mod scalar;
pub mod train;

pub use error::{Error, Result};
pub use metrics::EvalReport;
pub use model::{DeepCross, ModelConfig, Prediction};
pub use scalar::Scalar;
pub use train::{evaluate, train, TrainConfig};

pub type Tensor64 = numerics::Tensor<f64>;
pub type Tensor32 = numerics::Tensor<f32>;
pub type Tape64<'p> = numerics::Tape<'p, f64>;
pub type Tape32<'p> = numerics::Tape<'p, f32>;
pub type ParamStore64 = numerics::ParamStore<f64>;
pub type ParamStore32 = numerics::ParamStore<f32>;
pub type DeepCross64 = model::DeepCross<f64>;
pub type DeepCross32 = model::DeepCross<f32>;
