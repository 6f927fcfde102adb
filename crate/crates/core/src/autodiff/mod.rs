//! Reverse-mode differentiation, tensors, parameters, Adam and checkpoints.

pub mod adam;
pub mod checkpoint;
pub mod params;
pub mod tape;
pub mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use params::{glorot_uniform, ParamId, ParamStore, Parameter};
pub use tape::{CustomOp, Gradients, Tape, Var};
pub use tensor::Tensor;
