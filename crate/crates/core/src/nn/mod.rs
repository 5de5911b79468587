//! Hand-rolled neural network kernel: 3D convolution, batch norm, pooling,
//! fully connected layers, softmax loss and Adam, every backward pass written
//! against its forward counterpart.

pub mod activation;
pub mod adam;
pub mod batchnorm;
pub mod conv;
pub mod fc;
pub mod pool;
pub mod softmax;
pub mod stack;

pub use activation::Activation;
pub use adam::{AdamParams, AdamState};
pub use batchnorm::{BatchNorm, BnGrads};
pub use conv::{ConvGrads, ConvLayer};
pub use fc::{FcGrads, FcLayer};
pub use pool::{maxpool_backward, maxpool_forward, pooled_dims};
pub use softmax::{argmax, cross_entropy, softmax, softmax_ce_grad, CE_CLAMP};
pub use stack::{
    CnnStack, ScoreField, StackAdam, StackConfig, StackGrads, StackTrace, StatsRecalibration,
};
