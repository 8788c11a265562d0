//! Minimal dense reverse-mode differentiation.
//!
//! Values are row-major `f64` tensors of rank 0, 1 or 2. A [`Tape`] records
//! primitive operations in execution order; [`Tape::backward`] walks it once
//! in reverse to produce exact gradients for every parameter leaf.
//!
//! There is no broadcasting. Operations that combine a matrix with a row or
//! column vector say so in their name (`add_row`, `scale_rows`).

mod checkpoint;
pub mod gradcheck;
mod init;
mod optim;
mod tape;
mod tensor;

pub(crate) mod kernels;

pub use checkpoint::{read_tensor_records, write_tensor_records, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use init::{dropout_mask, xavier_uniform};
pub use optim::{rmsprop_step, RmsProp, RmsPropConfig};
pub use tape::{Axis, Gradients, Tape, Var};
pub use tensor::Tensor;
