//! Dense tensors with tape-based reverse-mode differentiation.
//!
//! Only the ops the codec and the losses need are provided. Shapes are
//! explicit: apart from [`Graph::add_row`] there is no broadcasting, and a
//! shape mismatch is reported when the node is built.

pub mod check;
mod graph;
mod optim;
mod params;
mod tensor;

pub use graph::{Graph, Neighborhoods, Precision, SparseRows, Var};
pub use optim::{Adam, StepOutcome};
pub use params::{ParamId, ParamStore};
pub use tensor::Tensor;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum GraphError {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },
    #[error("gradients requested before backward")]
    NoBackward,
}

#[cfg(test)]
mod tests;
