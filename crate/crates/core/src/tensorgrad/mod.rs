//! Dense arrays with reverse-mode differentiation, plus the AdamW optimizer and the
//! warmup-cosine learning-rate schedule used to train the denoisers.

pub mod checkpoint;
mod graph;
mod kernels;
mod optim;
mod params;
mod scalar;
mod tensor;

pub use graph::{Gradients, Graph, Var};
pub use optim::{cosine_lr, AdamW};
pub use params::{ParamId, ParamStore};
pub use scalar::{sum_f64, Scalar};
pub use tensor::Tensor;

#[cfg(test)]
mod tests;
