//! Core numerics for deformable Gaussian head fields: dense tensors, a
//! reverse-mode tape, gradient checking, Adam, the Gaussian field itself,
//! tri-plane hash encoders, small MLPs, and the on-disk formats.

pub mod conv;
pub mod error;
pub mod field;
pub mod gradcheck;
pub mod hash;
pub mod io;
pub mod mlp;
pub mod optim;
pub mod tape;
pub mod tensor;

pub use error::{CoreError, Result};
pub use tape::{concat, concat_cols, concat_rows, Gradients, Tape, Var};
pub use tensor::Tensor;
