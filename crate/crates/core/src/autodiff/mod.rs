//! Reverse-mode automatic differentiation over NCHW tensors.

mod adam;
pub mod checkpoint;
mod conv;
pub mod gradcheck;
mod graph;
mod params;
mod scalar;
mod ssim_loss;
mod tensor;

pub use adam::{Adam, AdamConfig};
pub use checkpoint::Checkpoint;
pub use gradcheck::{grad_check, GradCheckConfig, GradCheckReport};
pub use graph::{bce_term, sigmoid, Graph, Var};
pub use params::{Param, ParamStore};
pub use scalar::Scalar;
pub use tensor::{Shape, Tensor};
