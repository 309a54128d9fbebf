//! Dense `f64` tensors, a define-by-run reverse-mode graph, a named parameter
//! registry, initializers and optimizers.

mod error;
mod graph;
mod init;
mod optim;
mod params;
mod tensor;

pub use error::{Result, TensorError};
pub use graph::{log_sum_exp, sigmoid, Elementwise, Graph, Mutation, Var};
pub use init::{derive_seed, Initializer};
pub use optim::{Adam, Sgd};
pub use params::{Bindings, ParamId, ParamStore};
pub use tensor::Tensor;
