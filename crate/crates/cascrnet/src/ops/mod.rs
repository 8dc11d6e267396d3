//! Differentiable primitive operations.
//!
//! Every primitive is a pure function of its inputs paired with an explicit
//! vector-Jacobian product; [`crate::tape`] composes them into trainable graphs.

mod conv;
mod linear;
mod pool;

pub use conv::{conv2d, conv2d_vjp, ConvSpec, Padding, ResolvedPad};
pub use linear::{
    concat_channels, concat_channels_vjp, dense, dense_vjp, leaky_relu, leaky_relu_vjp, softmax,
};
pub use pool::{
    avgpool2d, avgpool2d_vjp, broadcast_spatial, broadcast_spatial_vjp, global_avg_pool,
    global_avg_pool_vjp, maxpool2d, maxpool2d_vjp, maxpool2d_with_argmax,
};
