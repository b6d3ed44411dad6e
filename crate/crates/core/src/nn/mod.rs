//! Minimal dense network engine: forward/backward with analytic gradients,
//! SGD/Adam, a binary snapshot format, and a finite-difference oracle.

mod dense;
mod gradcheck;
mod optim;
pub mod snapshot;
mod tensor;

pub use dense::{sigmoid, softmax_in_place, softplus, Activation, Dense, DenseNet, LayerGrad, ParamGrads};
pub use gradcheck::{finite_diff_check, ParamSet, RELATIVE_ERROR_FLOOR};
pub use optim::{apply_update, OptimizerKind, OptimizerState, ADAM_BETA1, ADAM_BETA2, ADAM_EPSILON};
pub use tensor::Tensor;
