//! Dense tensors, a reverse-mode computation graph, and the Adam optimizer.

mod graph;
mod params;
mod tensor;

pub use graph::{Gradients, Graph, Var};
pub use params::{Adam, ParamGrads, ParamId, ParamStore, ParamTensor};
pub use tensor::Tensor;
