//! Reverse-mode automatic differentiation over dense `f64` arrays.

mod fdcheck;
mod graph;
mod tensor;

pub use fdcheck::finite_difference_check;
pub use graph::{log_one_minus_tanh_sq, softplus, Bindings, Graph, NodeId, Op};
pub use tensor::Tensor;
pub(crate) use tensor::gemm;
