//! Dense f64 tensors with a reverse-mode gradient tape.

mod error;
pub mod gradcheck;
pub mod catalog;
pub mod init;
mod ops;
mod tape;
mod tensor;

pub use error::{Result, TensorError};
pub use ops::{conv2d_output_len, conv_transpose2d_output_len, sigmoid};
pub use tape::{Gradients, Param, Tape, Var};
pub use tensor::{Precision, Tensor};
