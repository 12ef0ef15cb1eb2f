//! Parameter storage and hand-differentiated layers.
//!
//! Layers hold only [`TensorId`]s into a [`ParamStore`]; forward passes read the
//! store and return a cache, backward passes consume the cache and accumulate
//! into [`Grads`]. Gradients are only materialised for the groups a caller asks
//! for, so backpropagating through a frozen encoder costs no weight-gradient
//! work.

mod attention;
mod layers;
mod params;
mod transformer;

pub use attention::{AttentionCache, MultiHeadAttention};
pub use layers::{gelu, gelu_backward, relu_backward, relu_inplace, LayerNorm, LayerNormCache, Linear};
pub use params::{normal_init, Grads, Param, ParamGroup, ParamStore, TensorId};
pub use transformer::{Block, BlockCache, Transformer, TransformerCache};
