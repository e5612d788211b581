//! Dense numerical building blocks with hand-derived gradients.

mod attention;
mod layers;
pub mod ops;
mod scalar;
mod tensor;

pub use attention::{AttentionCache, MultiHeadAttention};
pub use layers::{LayerNorm, Linear, ParamTensor};
pub use ops::Activation;
pub use scalar::Scalar;
pub use tensor::Tensor;
