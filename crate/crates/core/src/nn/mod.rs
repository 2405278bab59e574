//! Minimal reverse-mode autodiff over dense `f64` tensors and the pieces
//! GLENet is built from.

pub mod checkpoint;
mod graph;
mod layers;
mod optim;
mod params;
mod sample;
mod tensor;

pub use graph::{Gradients, Graph, Var};
pub use layers::{Init, Linear, Mlp, PointEncoder};
pub use optim::{AdamConfig, OneCycle, OptimizerState};
pub use params::{ParamId, ParamStore};
pub use sample::sample_reparameterized;
pub use tensor::Tensor;

pub(crate) use graph::sigmoid;
