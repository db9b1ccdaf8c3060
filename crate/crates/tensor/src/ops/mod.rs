mod conv;
mod elementwise;
mod linalg;
mod loss;
mod pool;
mod reduce;
mod shape;

pub use conv::{conv2d_output_len, conv_transpose2d_output_len};
pub use elementwise::sigmoid;
