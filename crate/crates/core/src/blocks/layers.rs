use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::attention::{image_to_tokens, masa_layer_forward, tokens_to_image, MaSAConfig, MaSAParams};
use crate::decay::GridShape;
use crate::error::{config_err, dim_err, Result};
use crate::params::HasParams;
use crate::tensor::Tensor;

use super::config::StageConfig;

pub(crate) const NORM_EPS: f64 = 1e-5;

/// He-normal weights for a dense convolution, `std = sqrt(2 / fan_in)`.
fn kaiming_normal<R: Rng + ?Sized>(shape: &[usize], rng: &mut R) -> Tensor {
    let fan_in: usize = shape[1..].iter().product();
    let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
    let data = (0..shape.iter().product()).map(|_| normal.sample(rng)).collect();
    Tensor::new(data, shape).expect("finite samples")
}

fn vector(x: &Tensor, name: &str, len: usize) -> Result<()> {
    if x.shape() != [len] {
        return dim_err(format!("{name} has shape {:?}, expected [{len}]", x.shape()));
    }
    Ok(())
}

/// Layer normalization over channels.
#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl LayerNorm {
    pub fn new(channels: usize) -> LayerNorm {
        LayerNorm { weight: Tensor::ones(&[channels]), bias: Tensor::zeros(&[channels]) }
    }

    pub fn zeros(channels: usize) -> LayerNorm {
        LayerNorm { weight: Tensor::zeros(&[channels]), bias: Tensor::zeros(&[channels]) }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        x.layer_norm(&self.weight, &self.bias, NORM_EPS)
    }
}

impl HasParams for LayerNorm {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        f(&format!("{prefix}weight"), &self.weight);
        f(&format!("{prefix}bias"), &self.bias);
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        f(&format!("{prefix}weight"), &mut self.weight);
        f(&format!("{prefix}bias"), &mut self.bias);
    }
}

/// Dense 3×3 convolution with bias on `[C, H, W]` images, padding 1.
#[derive(Clone, Debug)]
pub struct Conv3x3 {
    pub weight: Tensor,
    pub bias: Tensor,
    pub stride: usize,
}

impl Conv3x3 {
    pub fn init<R: Rng + ?Sized>(c_in: usize, c_out: usize, stride: usize, rng: &mut R) -> Conv3x3 {
        Conv3x3 {
            weight: kaiming_normal(&[c_out, c_in, 3, 3], rng),
            bias: Tensor::zeros(&[c_out]),
            stride,
        }
    }

    pub fn c_out(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn forward(&self, image: &Tensor) -> Result<Tensor> {
        let c = self.c_out();
        image
            .conv2d(&self.weight, self.stride, 1, 1)?
            .add(&self.bias.reshape(&[c, 1, 1])?)
    }
}

impl HasParams for Conv3x3 {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        f(&format!("{prefix}weight"), &self.weight);
        f(&format!("{prefix}bias"), &self.bias);
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        f(&format!("{prefix}weight"), &mut self.weight);
        f(&format!("{prefix}bias"), &mut self.bias);
    }
}

/// Batch normalization in inference form: a per-channel scale and shift.
#[derive(Clone, Debug)]
pub struct ChannelAffine {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl ChannelAffine {
    pub fn new(channels: usize) -> ChannelAffine {
        ChannelAffine { weight: Tensor::ones(&[channels]), bias: Tensor::zeros(&[channels]) }
    }

    pub fn forward(&self, image: &Tensor) -> Result<Tensor> {
        let c = self.weight.numel();
        image
            .mul(&self.weight.reshape(&[c, 1, 1])?)?
            .add(&self.bias.reshape(&[c, 1, 1])?)
    }
}

impl HasParams for ChannelAffine {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        f(&format!("{prefix}weight"), &self.weight);
        f(&format!("{prefix}bias"), &self.bias);
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        f(&format!("{prefix}weight"), &mut self.weight);
        f(&format!("{prefix}bias"), &mut self.bias);
    }
}

/// Strides of the five stem convolutions.
pub const STEM_STRIDES: [usize; 5] = [2, 1, 2, 1, 1];

/// Five 3×3 convolutions taking an RGB image to a grid at a quarter of its side.
#[derive(Clone, Debug)]
pub struct ConvStem {
    pub convs: Vec<Conv3x3>,
    pub norms: Vec<ChannelAffine>,
}

impl ConvStem {
    /// Widths `[C/2, C/2, C, C, C]` for an output width `C`.
    pub fn init<R: Rng + ?Sized>(channels: usize, rng: &mut R) -> ConvStem {
        let widths = stem_widths(channels);
        let mut c_in = 3;
        let mut convs = Vec::new();
        let mut norms = Vec::new();
        for (&w, &s) in widths.iter().zip(&STEM_STRIDES) {
            convs.push(Conv3x3::init(c_in, w, s, rng));
            norms.push(ChannelAffine::new(w));
            c_in = w;
        }
        ConvStem { convs, norms }
    }

    pub fn channels(&self) -> usize {
        self.convs.last().map_or(0, |c| c.c_out())
    }

    /// `image[3, R, R]` to tokens `[(R/4)², C]`.
    pub fn forward(&self, image: &Tensor) -> Result<(Tensor, GridShape)> {
        if image.rank() != 3 || image.shape()[0] != 3 {
            return dim_err(format!("stem expects an image [3, R, R], got {:?}", image.shape()));
        }
        let (h, w) = (image.shape()[1], image.shape()[2]);
        if h % 4 != 0 || w % 4 != 0 {
            return config_err(format!("stem input {h}x{w} is not divisible by 4"));
        }
        let last = self.convs.len() - 1;
        let mut x = image.clone();
        for (i, (conv, norm)) in self.convs.iter().zip(&self.norms).enumerate() {
            x = norm.forward(&conv.forward(&x)?)?;
            if i < last {
                x = x.gelu()?;
            }
        }
        image_to_tokens(&x)
    }
}

pub(crate) fn stem_widths(channels: usize) -> [usize; 5] {
    [channels / 2, channels / 2, channels, channels, channels]
}

impl HasParams for ConvStem {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        for (i, (c, n)) in self.convs.iter().zip(&self.norms).enumerate() {
            c.visit_params(&format!("{prefix}{i}.conv."), f);
            n.visit_params(&format!("{prefix}{i}.norm."), f);
        }
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        for (i, (c, n)) in self.convs.iter_mut().zip(&mut self.norms).enumerate() {
            c.visit_params_mut(&format!("{prefix}{i}.conv."), f);
            n.visit_params_mut(&format!("{prefix}{i}.norm."), f);
        }
    }
}

/// Residual depthwise 3×3 positional encoding.
#[derive(Clone, Debug)]
pub struct Cpe {
    pub kernel: Tensor,
    pub bias: Tensor,
}

impl Cpe {
    pub fn init<R: Rng + ?Sized>(channels: usize, rng: &mut R) -> Cpe {
        Cpe { kernel: Tensor::trunc_normal(&[channels, 3, 3], 0.02, rng), bias: Tensor::zeros(&[channels]) }
    }

    pub fn zeros(channels: usize) -> Cpe {
        Cpe { kernel: Tensor::zeros(&[channels, 3, 3]), bias: Tensor::zeros(&[channels]) }
    }

    /// `X + DWConv3×3(X) + bias` on tokens `[N, C]`.
    pub fn forward(&self, x: &Tensor, grid: GridShape) -> Result<Tensor> {
        let c = self.kernel.shape()[0];
        vector(&self.bias, "CPE bias", c)?;
        let conv = tokens_to_image(x, grid)?.depthwise_conv2d(&self.kernel)?;
        let (tokens, _) = image_to_tokens(&conv)?;
        x.add(&tokens)?.add(&self.bias)
    }
}

impl HasParams for Cpe {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        f(&format!("{prefix}kernel"), &self.kernel);
        f(&format!("{prefix}bias"), &self.bias);
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        f(&format!("{prefix}kernel"), &mut self.kernel);
        f(&format!("{prefix}bias"), &mut self.bias);
    }
}

/// Two-layer MLP `GELU(X W1 + b1) W2 + b2`.
#[derive(Clone, Debug)]
pub struct Ffn {
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
}

impl Ffn {
    pub fn init<R: Rng + ?Sized>(channels: usize, hidden: usize, rng: &mut R) -> Ffn {
        Ffn {
            w1: Tensor::trunc_normal(&[channels, hidden], 0.02, rng),
            b1: Tensor::zeros(&[hidden]),
            w2: Tensor::trunc_normal(&[hidden, channels], 0.02, rng),
            b2: Tensor::zeros(&[channels]),
        }
    }

    pub fn zeros(channels: usize, hidden: usize) -> Ffn {
        Ffn {
            w1: Tensor::zeros(&[channels, hidden]),
            b1: Tensor::zeros(&[hidden]),
            w2: Tensor::zeros(&[hidden, channels]),
            b2: Tensor::zeros(&[channels]),
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        x.matmul(&self.w1)?.add(&self.b1)?.gelu()?.matmul(&self.w2)?.add(&self.b2)
    }
}

impl HasParams for Ffn {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        f(&format!("{prefix}w1"), &self.w1);
        f(&format!("{prefix}b1"), &self.b1);
        f(&format!("{prefix}w2"), &self.w2);
        f(&format!("{prefix}b2"), &self.b2);
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        f(&format!("{prefix}w1"), &mut self.w1);
        f(&format!("{prefix}b1"), &mut self.b1);
        f(&format!("{prefix}w2"), &mut self.w2);
        f(&format!("{prefix}b2"), &mut self.b2);
    }
}

/// Weights of one RMT block.
#[derive(Clone, Debug)]
pub struct BlockParams {
    pub cpe: Cpe,
    pub norm1: LayerNorm,
    pub masa: MaSAParams,
    pub norm2: LayerNorm,
    pub ffn: Ffn,
}

impl BlockParams {
    pub fn init<R: Rng + ?Sized>(config: &BlockConfig, rng: &mut R) -> BlockParams {
        let c = config.masa.dim;
        BlockParams {
            cpe: Cpe::init(c, rng),
            norm1: LayerNorm::new(c),
            masa: MaSAParams::init(&config.masa, rng),
            norm2: LayerNorm::new(c),
            ffn: Ffn::init(c, config.ffn_hidden, rng),
        }
    }

    /// Every tensor zero, norm scales included.
    pub fn zeros(config: &BlockConfig) -> BlockParams {
        let c = config.masa.dim;
        BlockParams {
            cpe: Cpe::zeros(c),
            norm1: LayerNorm::zeros(c),
            masa: MaSAParams::zeros(&config.masa),
            norm2: LayerNorm::zeros(c),
            ffn: Ffn::zeros(c, config.ffn_hidden),
        }
    }
}

impl HasParams for BlockParams {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        self.cpe.visit_params(&format!("{prefix}cpe."), f);
        self.norm1.visit_params(&format!("{prefix}norm1."), f);
        self.masa.visit_params(&format!("{prefix}masa."), f);
        self.norm2.visit_params(&format!("{prefix}norm2."), f);
        self.ffn.visit_params(&format!("{prefix}ffn."), f);
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        self.cpe.visit_params_mut(&format!("{prefix}cpe."), f);
        self.norm1.visit_params_mut(&format!("{prefix}norm1."), f);
        self.masa.visit_params_mut(&format!("{prefix}masa."), f);
        self.norm2.visit_params_mut(&format!("{prefix}norm2."), f);
        self.ffn.visit_params_mut(&format!("{prefix}ffn."), f);
    }
}

/// Attention settings and FFN width of one block.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockConfig {
    pub masa: MaSAConfig,
    pub ffn_hidden: usize,
}

impl BlockConfig {
    pub fn from_stage(stage: &StageConfig) -> Result<BlockConfig> {
        stage.validate()?;
        Ok(BlockConfig { masa: stage.masa_config()?, ffn_hidden: stage.ffn_hidden()? })
    }
}

/// `X₁ = cpe(X)`, `X₂ = X₁ + MaSA(LN(X₁))`, `X₃ = X₂ + FFN(LN(X₂))`.
pub fn rmt_block(x: &Tensor, grid: GridShape, params: &BlockParams, config: &BlockConfig) -> Result<Tensor> {
    let x1 = params.cpe.forward(x, grid)?;
    let attn = masa_layer_forward(&params.norm1.forward(&x1)?, &params.masa, &config.masa, grid)?;
    let x2 = x1.add(&attn)?;
    x2.add(&params.ffn.forward(&params.norm2.forward(&x2)?)?)
}

/// Stride-2 3×3 convolution between stages followed by a layer norm.
#[derive(Clone, Debug)]
pub struct Downsample {
    pub conv: Conv3x3,
    pub norm: LayerNorm,
}

impl Downsample {
    pub fn init<R: Rng + ?Sized>(c_in: usize, c_out: usize, rng: &mut R) -> Downsample {
        Downsample { conv: Conv3x3::init(c_in, c_out, 2, rng), norm: LayerNorm::new(c_out) }
    }

    /// Tokens on an `H×W` grid to tokens on an `H/2 × W/2` grid.
    pub fn forward(&self, x: &Tensor, grid: GridShape) -> Result<(Tensor, GridShape)> {
        if !grid.height.is_multiple_of(2) || !grid.width.is_multiple_of(2) {
            return config_err(format!(
                "cannot halve a {}x{} grid: both sides must be even",
                grid.height, grid.width
            ));
        }
        let image = self.conv.forward(&tokens_to_image(x, grid)?)?;
        let (tokens, out_grid) = image_to_tokens(&image)?;
        Ok((self.norm.forward(&tokens)?, out_grid))
    }
}

impl HasParams for Downsample {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        self.conv.visit_params(&format!("{prefix}conv."), f);
        self.norm.visit_params(&format!("{prefix}norm."), f);
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        self.conv.visit_params_mut(&format!("{prefix}conv."), f);
        self.norm.visit_params_mut(&format!("{prefix}norm."), f);
    }
}
