//! Tensors, the differentiation tape, and Gaussian primitives.

pub mod graph;
pub mod prob;
pub mod tensor;

pub use graph::{Gradients, Graph, Var};
pub use prob::{gaussian_log_prob, kl_diag_gaussian_to_std_normal, softmax_rows, LOG_2PI};
pub use tensor::Tensor;
