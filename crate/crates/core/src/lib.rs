//! Shifted-window attention and a hierarchical vision backbone built on a
//! small dense tensor engine with reverse-mode gradients.

pub mod attention;
pub mod autograd;
pub mod bench;
mod cache;
pub mod checkpoint;
pub mod error;
pub mod gradcheck;
pub mod io;
pub mod kernels;
pub mod meter;
pub mod model;
pub mod optim;
pub mod params;
pub mod scalar;
pub mod tensor;
pub mod verify;
pub mod windowing;

pub use autograd::{backward, Gradients, Var};
pub use error::{Error, Result};
pub use params::{Ctx, Init, ParamId, ParamStore, Parameter};
pub use scalar::{DType, Scalar};
pub use tensor::{RowMap, Tensor};
