//! Dense tensors, a reverse-mode tape, Adam, and parameter checkpoints.

mod adam;
mod checkpoint;
mod gradcheck;
mod graph;
mod params;
mod tensor;

pub use adam::Adam;
pub use checkpoint::{Checkpoint, FORMAT_VERSION};
pub use gradcheck::{grad_check, grad_check_by_param, grad_check_sampled, jitter_biases};
pub use graph::{sigmoid, Graph, Var};
pub use params::{Gradients, ParamId, ParamStore, Parameter};
pub use tensor::Tensor;
