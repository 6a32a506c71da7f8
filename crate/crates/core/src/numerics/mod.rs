//! Dense arrays and reverse-mode gradients.

mod array;
mod graph;

pub use array::{sigmoid, RealArray};
pub use graph::{log_softmax_values, softmax_values, Gradients, Graph, Var};
