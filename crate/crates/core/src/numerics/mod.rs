//! Primitive differentiable layers. Every layer is a pair of pure functions:
//! a forward pass and an explicit backward pass returning exact gradients.

mod activation;
mod conv;
pub mod gates;
mod linear;
mod norm;
mod pool;

pub use activation::{
    channel_softmax_backward, channel_softmax_forward, relu_backward, relu_forward, sigmoid, sigmoid_backward,
    sigmoid_forward,
};
pub use conv::{
    conv2d_backward, conv2d_forward, transposed_conv2d_backward, transposed_conv2d_forward, ConvSpec,
    ConvTransposeSpec,
};
pub use linear::{fully_connected_backward, fully_connected_forward};
pub use norm::{
    batchnorm2d_backward, batchnorm2d_forward, update_running_stats, BatchNormCache, BN_EPS, BN_MOMENTUM,
};
pub use pool::{maxpool2x2_backward, maxpool2x2_forward};

use crate::tensor::Tensor;

/// Whether normalization layers use batch statistics or running statistics.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

/// Gradients of one layer: with respect to its input, and with respect to
/// each of its parameters in declaration order.
#[derive(Clone, Debug)]
pub struct LayerGrads<T> {
    pub d_input: Tensor<T>,
    pub d_weights: Vec<Tensor<T>>,
}
