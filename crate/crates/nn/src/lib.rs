//! A tape-based reverse-mode autodiff engine with exactly the layers needed
//! by 2D encoder-decoder segmenters and patch discriminators.
//!
//! Activations are NHWC `f64` tensors. Convolutions are lowered to GEMM via
//! im2col, which keeps the engine small while staying fast enough to train
//! width-reduced networks on a CPU.

mod graph;
pub mod init;
mod kernels;
mod optim;
mod params;

pub use graph::{sigmoid, Graph, NodeId};
pub use kernels::Padding;
pub use optim::Adam;
pub use params::{Gradients, Param, ParamId, ParamKey, ParamSet, ParamStore};
