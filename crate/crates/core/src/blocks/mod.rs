//! The RMT backbone: convolutional stem, positional encoding, FFN, the RMT
//! block, stage transitions, presets and parameter/MAC accounting.
//!
//! Tokens travel between layers as `[N, C]` matrices over a row-major
//! [`GridShape`]; convolutional layers reshape them to
//! `[C, H, W]` images and back.

mod config;
mod layers;
mod model;
mod stats;

pub use config::{ModelConfig, StageConfig, PRESETS};
pub use layers::{
    rmt_block, BlockConfig, BlockParams, ChannelAffine, Conv3x3, ConvStem, Cpe, Downsample, Ffn,
    LayerNorm, STEM_STRIDES,
};
pub use model::{build_backbone, count_params, forward_classify, Head, Model, Stage};
pub use stats::{count_flops, model_stats, param_count, ModelStats, StageStats};

use crate::decay::GridShape;
use crate::error::Result;
use crate::tensor::Tensor;

/// Stem on `image[3, R, R]`; see [`ConvStem::forward`].
pub fn conv_stem(stem: &ConvStem, image: &Tensor) -> Result<(Tensor, GridShape)> {
    stem.forward(image)
}

/// Residual depthwise positional encoding; see [`Cpe::forward`].
pub fn cpe(x: &Tensor, grid: GridShape, params: &Cpe) -> Result<Tensor> {
    params.forward(x, grid)
}

/// Two-layer GELU MLP; see [`Ffn::forward`].
pub fn ffn(x: &Tensor, params: &Ffn) -> Result<Tensor> {
    params.forward(x)
}

/// Stage transition; see [`Downsample::forward`].
pub fn downsample(x: &Tensor, grid: GridShape, params: &Downsample) -> Result<(Tensor, GridShape)> {
    params.forward(x, grid)
}
