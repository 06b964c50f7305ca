//! Neural-network primitives: convolution, pooling, batch normalization,
//! fully connected layers and activations.

pub mod activation;
pub mod batchnorm;
pub mod conv;
pub mod counter;
pub mod linear;
pub mod pool;

pub use activation::{relu, sigmoid};
pub use batchnorm::{BatchNorm2d, BnCache, BnGrads, BnMode, RunningStats};
pub use conv::{conv2d_backward, conv2d_dense, conv2d_forward, ConvBackward, ConvGrads, ConvKernel, PreparedConv};
pub use counter::{MacCount, OpKey, OpPath, OpsCounter};
pub use linear::{fc_forward, Linear, LinearGrads};
pub use pool::{maxpool2x2_backward, maxpool2x2_forward, PoolIndices};
