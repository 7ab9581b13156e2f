//! Small dense-tensor library with tape-based reverse-mode differentiation
//! and the layers needed by the crowd-flow forecaster: 3x3 convolution, dense
//! and MLP blocks, layer normalization, multi-head self-attention, a pre-norm
//! Transformer encoder, sinusoidal position encoding and Adam.
//!
//! All arithmetic is `f64`.

pub mod error;
pub mod gradcheck;
pub mod graph;
mod kernels;
pub mod layers;
pub mod optim;
pub mod params;
pub mod posenc;
pub mod tensor;

pub use error::{NnError, Result};
pub use graph::{Gradients, Graph, Var};
pub use layers::{Conv2d, Dense, LayerNorm, Mlp, MultiHeadAttention, TransformerBlock, TransformerEncoder};
pub use optim::Adam;
pub use params::{seeded_init, InitScheme, Initializer, ParamId, ParamStore, Parameter};
pub use posenc::positional_encoding;
pub use tensor::Tensor;
