//! Minimal trainable layer engine: forward/backward for every primitive the model uses,
//! SGD with momentum, and a central-difference gradient checker.
//!
//! Conventions:
//! - convolution is cross-correlation (no kernel flip), weights `[out, in, kh, kw]`;
//! - 2x2 max-pool ties resolve to the first maximal element in row-major window order;
//! - dropout is inverted (survivors scaled by `1/(1-rate)`), so inference is the identity;
//! - bilinear upsampling is corner-aligned: output index `i` samples source coordinate
//!   `i * (in - 1) / (out - 1)`, which is the identity at equal sizes and preserves constants.

mod activation;
pub(crate) mod conv;
mod gradcheck;
mod layer;
mod linear;
mod pool;
mod sgd;
mod upsample;

pub use activation::{dropout, dropout_backward, relu, relu_backward, relu_in_place};
pub use conv::{conv2d, conv2d_backward, ConvGrads};
pub use gradcheck::{grad_check, relative_error, FnObjective, GradCheckReport, Objective};
pub use layer::{LayerGrads, LayerParams};
pub use linear::{linear, linear_backward, LinearGrads};
pub use pool::{maxpool2x2, maxpool2x2_backward, PoolIndices};
pub use sgd::{sgd_step, OptimizerConfig};
pub use upsample::bilinear_upsample;
