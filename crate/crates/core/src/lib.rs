//! Class-agnostic object segment proposals from a single convolutional network.
//!
//! A shared convolutional trunk feeds two heads: one predicts a binary mask for the
//! object centred in an input patch, the other predicts whether such an object exists.
//! The crate provides the numeric engine, model, training sampler, dense multi-scale
//! inference and recall metrics. Every numeric type is generic over [`Scalar`]; the
//! aliases at the bottom pick concrete precisions.

pub mod check;
pub mod error;
pub mod eval;
pub mod fsutil;
pub mod image;
pub mod inference;
pub mod mask;
pub mod model;
pub mod nn;
pub mod rng;
pub mod sampler;
pub mod scalar;
pub mod tensor;

pub use error::{Error, Result};
pub use scalar::Scalar;
pub use tensor::Tensor;

pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
pub type Params32 = model::ModelParams<f32>;
pub type Params64 = model::ModelParams<f64>;
