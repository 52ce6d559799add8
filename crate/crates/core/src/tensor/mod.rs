//! Minimal dense tensor engine with reverse-mode differentiation.
//!
//! Everything the classifier needs and nothing more: strided 2-D
//! convolution, batch normalization, ReLU, residual addition, global
//! average pooling, a dense layer, softmax and fused softmax cross-entropy.

mod array;
pub(crate) mod conv;
mod gradcheck;
mod graph;
mod param;
mod scalar;

pub use array::Tensor;
pub use gradcheck::{finite_diff_check, relative_error, GradCheckReport};
pub use graph::{softmax_rows, Gradients, Graph, Mode, NormParams, NormStats, Var};
pub use param::{ParamId, ParamStore, Parameter};
pub use scalar::Scalar;

