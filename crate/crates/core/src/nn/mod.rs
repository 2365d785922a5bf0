//! Dense layers with hand-derived backward passes.

pub mod encoder;
pub mod gradcheck;
pub mod layers;
pub mod matrix;
pub mod mlp;

pub use encoder::{EncoderCache, TransformerEncoder};
pub use gradcheck::{grad_check, numeric_gradient, relative_error, GradCheckReport, FD_STEP};
pub use layers::{
    attention, cosine_sim, cosine_sim_with_grad, dropout_mask, ffn, masked_attention, mean_pool,
    mean_pool_backward, multi_head_attention, residual_layer_norm, softmax_rows, xavier_uniform,
    FeedForward, Layer, LayerGrads, LayerNorm, Linear, MultiHeadAttention, LAYER_NORM_EPS, MIN_NORM,
};
pub use matrix::Matrix;
pub use mlp::{sigmoid, Mlp, MlpCache};
