//! Minimal differentiable-programming toolkit used by the learned codecs.

pub mod gradcheck;
mod graph;
mod layers;
mod optim;
mod params;
mod tensor;

pub use graph::{Gradients, Graph, Var};
pub use layers::{Linear, Mlp};
pub use optim::{global_norm, Adam, StepLr};
pub use params::ParamStore;
pub use tensor::Tensor;
