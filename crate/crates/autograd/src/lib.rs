//! Minimal dense autodiff for small convolutional networks.
//!
//! Tensors are `f64`, laid out NCHW. A [`Graph`] records operations as they
//! are evaluated and produces parameter gradients with
//! [`Graph::backward`]. Convolutions lower to im2col + GEMM.

pub mod gradcheck;
pub mod graph;
pub mod kernels;
pub mod optim;
pub mod params;
pub mod tensor;

pub use graph::{softmax_channels_value, Gradients, Graph, Var};
pub use optim::{Adam, AdamConfig};
pub use params::ParamSet;
pub use tensor::{Real, Tensor};
