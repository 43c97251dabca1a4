//! Minimal differentiable-computation substrate: dense f64 tensors, a
//! reverse-mode tape, the layers the sequence models need (linear, layer
//! normalization, softmax, sigmoid, positional encoding, causal multi-head
//! self-attention), losses, and stochastic gradient descent.

pub mod checkpoint;
pub mod error;
pub mod layers;
pub mod optim;
pub mod tape;
pub mod tensor;

pub use error::{NeuralError, Result};
pub use layers::{causal_block, positional_encoding, AttentionConfig, BlockVars, ParamSet};
pub use optim::{sgd_step, sgd_step_all};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
