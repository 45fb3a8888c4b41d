//! Attention kernels: retention baselines, full and decomposed Manhattan
//! self-attention, local context enhancement, and the multi-head layer.

mod layer;
mod masa;
mod retention;

pub use layer::{masa_layer_forward, MaSA, MaSAConfig, MaSAParams};
pub use masa::{
    image_to_tokens, lce, masa_decomposed, masa_full, softmax_attention, tokens_to_image,
    AttentionMode,
};
pub use retention::{bi_retention, retention_parallel, retention_recurrent};
