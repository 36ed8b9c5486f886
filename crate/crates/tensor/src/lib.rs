//! Dense tensors, the forward kernels needed by small image convnets, and
//! tape-based reverse-mode gradients for every differentiable op.

mod error;
pub mod gradcheck;
mod graph;
pub mod kernels;
mod scalar;
mod tensor;

pub use error::{Result, TensorError};
pub use gradcheck::{finite_diff_check, finite_diff_check_many, GradReport};
pub use graph::{BinaryOp, Graph, ReduceOp, UnaryOp, Var};
pub use kernels::Padding;
pub use scalar::{DType, Scalar};
pub use tensor::Tensor;
