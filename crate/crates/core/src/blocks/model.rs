use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::decay::GridShape;
use crate::error::{config_err, Result};
use crate::params::HasParams;
use crate::tensor::Tensor;

use super::config::ModelConfig;
use super::layers::{rmt_block, BlockConfig, BlockParams, ConvStem, Downsample, LayerNorm};

/// Blocks of one stage, preceded by a transition for stages 2–4.
#[derive(Clone, Debug)]
pub struct Stage {
    pub downsample: Option<Downsample>,
    pub block_config: BlockConfig,
    pub blocks: Vec<BlockParams>,
}

impl Stage {
    pub fn forward(&self, x: &Tensor, grid: GridShape) -> Result<(Tensor, GridShape)> {
        let (mut x, grid) = match &self.downsample {
            Some(d) => d.forward(x, grid)?,
            None => (x.clone(), grid),
        };
        for block in &self.blocks {
            x = rmt_block(&x, grid, block, &self.block_config)?;
        }
        Ok((x, grid))
    }
}

impl HasParams for Stage {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        if let Some(d) = &self.downsample {
            d.visit_params(&format!("{prefix}downsample."), f);
        }
        for (i, b) in self.blocks.iter().enumerate() {
            b.visit_params(&format!("{prefix}blocks.{i}."), f);
        }
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        if let Some(d) = &mut self.downsample {
            d.visit_params_mut(&format!("{prefix}downsample."), f);
        }
        for (i, b) in self.blocks.iter_mut().enumerate() {
            b.visit_params_mut(&format!("{prefix}blocks.{i}."), f);
        }
    }
}

/// Final norm, global average pool over tokens and a linear classifier.
#[derive(Clone, Debug)]
pub struct Head {
    pub norm: LayerNorm,
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Head {
    pub fn init<R: Rng + ?Sized>(channels: usize, num_classes: usize, rng: &mut R) -> Head {
        Head {
            norm: LayerNorm::new(channels),
            weight: Tensor::trunc_normal(&[channels, num_classes], 0.02, rng),
            bias: Tensor::zeros(&[num_classes]),
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let c = self.weight.shape()[0];
        let pooled = self.norm.forward(x)?.mean_axis(0)?.reshape(&[1, c])?;
        let logits = pooled.matmul(&self.weight)?;
        logits.reshape(&[self.bias.numel()])?.add(&self.bias)
    }
}

impl HasParams for Head {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        self.norm.visit_params(&format!("{prefix}norm."), f);
        f(&format!("{prefix}weight"), &self.weight);
        f(&format!("{prefix}bias"), &self.bias);
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        self.norm.visit_params_mut(&format!("{prefix}norm."), f);
        f(&format!("{prefix}weight"), &mut self.weight);
        f(&format!("{prefix}bias"), &mut self.bias);
    }
}

/// Four-stage RMT classifier.
#[derive(Clone, Debug)]
pub struct Model {
    pub config: ModelConfig,
    pub stem: ConvStem,
    pub stages: Vec<Stage>,
    pub head: Head,
}

/// Initializes a model from `config`; the result depends only on
/// `(config, seed)`.
///
/// Linear projections, depthwise kernels and the classifier use a
/// truncated normal with σ = 0.02, dense convolutions use He-normal
/// weights, biases start at zero and norm scales at one.
pub fn build_backbone(config: &ModelConfig, seed: u64) -> Result<Model> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let stem = ConvStem::init(config.stages[0].channels, &mut rng);
    let mut stages = Vec::with_capacity(4);
    for (i, sc) in config.stages.iter().enumerate() {
        let downsample = (i > 0).then(|| Downsample::init(config.stages[i - 1].channels, sc.channels, &mut rng));
        let block_config = BlockConfig::from_stage(sc)?;
        let blocks = (0..sc.num_blocks).map(|_| BlockParams::init(&block_config, &mut rng)).collect();
        stages.push(Stage { downsample, block_config, blocks });
    }
    let head = Head::init(config.stages[3].channels, config.num_classes, &mut rng);
    Ok(Model { config: config.clone(), stem, stages, head })
}

impl Model {
    /// Final-stage tokens and their grid.
    pub fn forward_features(&self, image: &Tensor) -> Result<(Tensor, GridShape)> {
        let r = self.config.input_resolution;
        if image.shape() != [3, r, r] {
            return config_err(format!(
                "model expects an image [3, {r}, {r}], got {:?}",
                image.shape()
            ));
        }
        let (mut x, mut grid) = self.stem.forward(image)?;
        for stage in &self.stages {
            (x, grid) = stage.forward(&x, grid)?;
        }
        Ok((x, grid))
    }

    /// Class logits for one `[3, R, R]` image.
    pub fn forward(&self, image: &Tensor) -> Result<Tensor> {
        let (x, _) = self.forward_features(image)?;
        self.head.forward(&x)
    }
}

/// Class logits for one image; see [`Model::forward`].
pub fn forward_classify(model: &Model, image: &Tensor) -> Result<Tensor> {
    model.forward(image)
}

/// Number of scalar parameters held by the model.
pub fn count_params(model: &Model) -> usize {
    model.num_params()
}

impl HasParams for Model {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        self.stem.visit_params(&format!("{prefix}stem."), f);
        for (i, s) in self.stages.iter().enumerate() {
            s.visit_params(&format!("{prefix}stages.{i}."), f);
        }
        self.head.visit_params(&format!("{prefix}head."), f);
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        self.stem.visit_params_mut(&format!("{prefix}stem."), f);
        for (i, s) in self.stages.iter_mut().enumerate() {
            s.visit_params_mut(&format!("{prefix}stages.{i}."), f);
        }
        self.head.visit_params_mut(&format!("{prefix}head."), f);
    }
}

