//! Dense tensors and hand-written layers with explicit backward passes.
//!
//! Every layer follows the same convention: `forward` returns the output and
//! a cache, `backward` takes the upstream gradient and the cache, accumulates
//! into its own [`Param::grad`] buffers and returns the input gradient.

mod attention;
mod gradcheck;
mod layers;
mod loss;
mod lstm;
mod optim;
mod tensor;

pub use attention::{
    multihead_attention, multihead_attention_backward, AttnWeights, BlockCache, SelfAttention,
    SelfAttentionCache, TransformerBlock,
};
pub use gradcheck::{grad_check, numeric_gradient, relative_error};
pub use layers::{
    gelu, gelu_grad, gelu_tensor, Embedding, LayerNorm, LayerNormCache, Linear, Mlp, MlpCache,
    Module, Param,
};
pub use loss::{cross_entropy, cross_entropy_with_grad};
pub use lstm::{Lstm, LstmCache, LstmLayer};
pub use optim::{Adam, CosineSchedule};
pub use tensor::{dot, matmul_into, softmax, softmax_slice, Tensor};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum NumError {
    #[error("dimension mismatch: {left} vs {right}")]
    Dimension { left: usize, right: usize },
    #[error("shape error: {0}")]
    Shape(&'static str),
    #[error("configuration error: {0}")]
    Config(&'static str),
    #[error("index {index} out of range (bound {bound})")]
    Index { index: usize, bound: usize },
    #[error("empty sequence")]
    EmptySequence,
    #[error("non-finite value encountered")]
    NonFinite,
}
