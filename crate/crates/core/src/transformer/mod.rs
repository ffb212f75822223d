//! Forward pass of the attention-plus-FFN network class: embedding,
//! positional encoding, ReLU and masked-softmax heads, tokenwise FFNs and
//! residual blocks.
//!
//! Indices are 0-based throughout; for a `D`-dimensional prompt the rows are
//! `0..D` (x), `D` (label / scratch), `D+1` (scratch), `D+2, D+3`
//! (positional encoding) and `D+4` (ones).

mod attention;
mod ffn;
mod network;
mod token;

pub use attention::{
    attention_apply, attention_apply_dense, attention_softmax_masked, Activation, AttentionHead,
};
pub use ffn::{ffn_apply, FfnLayer, FfnStack};
pub use network::{
    block_apply, forward, forward_traced, Architecture, Block, Trace, TransformerSpec,
};
pub use token::{embed_prompt, positional_encoding, TokenMatrix, STATIC_ROWS};
