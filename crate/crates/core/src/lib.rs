//! Two-stream multi-modal 3D segmentation with uncertainty-gated feature fusion.
//!
//! Every numeric type is generic over [`Real`]; training uses the `f32`
//! aliases below and gradient checking the `f64` ones.

pub mod data;
pub mod error;
pub mod fusion;
pub mod infer;
pub mod nn;
pub mod scalar;
pub mod tensor;
pub mod train;

pub use error::{Error, NiftiError, Result};
pub use scalar::{Precision, Real};
pub use tensor::{Gradients, Tape, Tensor, Var};

pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
pub type FusionNet32 = fusion::FusionNet<f32>;
pub type FusionNet64 = fusion::FusionNet<f64>;
