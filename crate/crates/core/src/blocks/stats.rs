//! Closed-form parameter and multiply-accumulate counts.
//!
//! The counts follow the layer definitions one to one. Only products inside
//! matrix multiplications and convolutions are counted (one MAC per
//! multiply-add); norms, activations, softmax, decay products, residual adds
//! and pooling are not. Under this convention the totals equal what
//! [`count_macs`](crate::tensor::counter::count_macs) records during a
//! forward pass.

use serde::Serialize;

use crate::attention::AttentionMode;
use crate::decay::GridShape;
use crate::error::Result;

use super::config::{check_resolution, ModelConfig, StageConfig};
use super::layers::{stem_widths, STEM_STRIDES};

/// Accounting of one stage, transition included.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StageStats {
    pub stage: usize,
    pub grid: GridShape,
    pub channels: usize,
    pub blocks: usize,
    pub attention: AttentionMode,
    pub params: u64,
    pub macs: u64,
    /// Score and apply products of all heads in the stage.
    pub attention_macs: u64,
}

/// Accounting of a whole model at one input resolution.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ModelStats {
    pub resolution: usize,
    pub stem_params: u64,
    pub stem_macs: u64,
    pub stages: Vec<StageStats>,
    pub head_params: u64,
    pub head_macs: u64,
    pub params: u64,
    pub macs: u64,
}

fn conv3x3_params(c_in: u64, c_out: u64) -> u64 {
    9 * c_in * c_out + c_out
}

fn block_params(s: &StageConfig) -> Result<u64> {
    let c = s.channels as u64;
    let hidden = s.ffn_hidden()? as u64;
    let cpe = 9 * c + c;
    let norms = 2 * 2 * c;
    let masa = 4 * c * c + 25 * c;
    let ffn = c * hidden + hidden + hidden * c + c;
    Ok(cpe + norms + masa + ffn)
}

fn block_macs(s: &StageConfig, grid: GridShape) -> Result<(u64, u64)> {
    let n = grid.num_tokens() as u64;
    let c = s.channels as u64;
    let hidden = s.ffn_hidden()? as u64;
    let mode = if s.decomposed { AttentionMode::Decomposed } else { AttentionMode::Full };
    let attention = s.heads as u64 * mode.analytic_macs(grid, s.channels / s.heads);
    let cpe = 9 * n * c;
    let projections = 4 * n * c * c;
    let lce = 25 * n * c;
    let ffn = 2 * n * c * hidden;
    Ok((cpe + projections + attention + lce + ffn, attention))
}

/// Parameter and MAC counts of `config` evaluated at a `resolution²` input.
pub fn model_stats(config: &ModelConfig, resolution: usize) -> Result<ModelStats> {
    config.validate()?;
    check_resolution(resolution)?;

    let mut side = resolution;
    let (mut stem_params, mut stem_macs) = (0, 0);
    let mut c_in = 3u64;
    for (&w, &stride) in stem_widths(config.stages[0].channels).iter().zip(&STEM_STRIDES) {
        let w = w as u64;
        side /= stride;
        stem_params += conv3x3_params(c_in, w) + 2 * w;
        stem_macs += 9 * c_in * w * (side * side) as u64;
        c_in = w;
    }

    let mut stages = Vec::with_capacity(4);
    for (i, s) in config.stages.iter().enumerate() {
        let c = s.channels as u64;
        let (mut params, mut macs) = (0, 0);
        if i > 0 {
            side /= 2;
            let prev = config.stages[i - 1].channels as u64;
            params += conv3x3_params(prev, c) + 2 * c;
            macs += 9 * prev * c * (side * side) as u64;
        }
        let grid = GridShape::square(side)?;
        let (bm, am) = block_macs(s, grid)?;
        let blocks = s.num_blocks as u64;
        params += blocks * block_params(s)?;
        macs += blocks * bm;
        stages.push(StageStats {
            stage: i + 1,
            grid,
            channels: s.channels,
            blocks: s.num_blocks,
            attention: if s.decomposed { AttentionMode::Decomposed } else { AttentionMode::Full },
            params,
            macs,
            attention_macs: blocks * am,
        });
    }

    let c4 = config.stages[3].channels as u64;
    let k = config.num_classes as u64;
    let head_params = 2 * c4 + c4 * k + k;
    let head_macs = c4 * k;

    let params = stem_params + stages.iter().map(|s| s.params).sum::<u64>() + head_params;
    let macs = stem_macs + stages.iter().map(|s| s.macs).sum::<u64>() + head_macs;
    Ok(ModelStats { resolution, stem_params, stem_macs, stages, head_params, head_macs, params, macs })
}

/// Parameter count implied by `config`, without building the model.
pub fn param_count(config: &ModelConfig) -> Result<u64> {
    Ok(model_stats(config, config.input_resolution)?.params)
}

/// Multiply-accumulates of one forward pass at a `resolution²` input.
pub fn count_flops(config: &ModelConfig, resolution: usize) -> Result<u64> {
    Ok(model_stats(config, resolution)?.macs)
}
