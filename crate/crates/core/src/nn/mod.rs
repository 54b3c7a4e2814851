//! Minimal tensor library: NCHW kernels, tape autodiff, Adam and
//! checkpoints.

mod adam;
pub mod gradcheck;
mod graph;
pub mod kernels;
pub mod loss;
mod params;
mod scalar;
mod tensor;

pub use adam::Adam;
pub use graph::{Gradients, Graph, Var};
pub use params::{Param, ParamId, ParamStore};
pub use scalar::Scalar;
pub use tensor::Tensor;
