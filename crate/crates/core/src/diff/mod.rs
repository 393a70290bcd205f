//! Minimal reverse-mode differentiation: tensors, the tape, a GRU cell and
//! seeded random streams.

mod graph;
mod gru;
pub mod rng;
mod tensor;

pub use graph::{forward_backward, Gradients, Graph, Var};
pub use gru::{gru_cell, GruVars};
pub use rng::RngStream;
pub use tensor::Tensor;
