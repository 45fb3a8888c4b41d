use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::attention::MaSAConfig;
use crate::error::{config_err, Error, Result};

/// One of the four backbone stages.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageConfig {
    #[serde(rename = "blocks")]
    pub num_blocks: usize,
    pub channels: usize,
    pub heads: usize,
    pub ffn_ratio: f64,
    pub decay_a: f64,
    pub decay_b: f64,
    pub decomposed: bool,
}

impl StageConfig {
    /// FFN hidden width `ffn_ratio · channels`, which must be a positive integer.
    pub fn ffn_hidden(&self) -> Result<usize> {
        let hidden = self.ffn_ratio * self.channels as f64;
        if !(hidden >= 1.0) || hidden.fract() != 0.0 {
            return config_err(format!(
                "FFN ratio {} on {} channels does not give a whole hidden width",
                self.ffn_ratio, self.channels
            ));
        }
        Ok(hidden as usize)
    }

    pub fn masa_config(&self) -> Result<MaSAConfig> {
        MaSAConfig::new(self.channels, self.heads, self.decomposed, self.decay_a, self.decay_b)
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_blocks == 0 {
            return config_err("a stage needs at least one block");
        }
        if self.heads == 0 || !self.channels.is_multiple_of(self.heads) {
            return config_err(format!(
                "{} channels are not divisible into {} heads",
                self.channels, self.heads
            ));
        }
        self.ffn_hidden()?;
        self.masa_config()?;
        Ok(())
    }
}

/// Four stages, classifier width and the input side length.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub stages: Vec<StageConfig>,
    pub num_classes: usize,
    pub input_resolution: usize,
}

/// Names accepted by [`ModelConfig::preset`].
pub const PRESETS: [&str; 5] = ["rmt-t", "rmt-s", "rmt-b", "rmt-l", "tiny"];

struct PresetRow {
    blocks: [usize; 4],
    channels: [usize; 4],
    heads: [usize; 4],
    ratios: [f64; 4],
    decay_b: [f64; 4],
}

impl ModelConfig {
    /// Named configuration at 224² with 1000 classes (the `tiny` preset uses
    /// 32² and 2 classes).
    ///
    /// Stages 1–3 use decomposed attention, stage 4 the full form. The
    /// `tiny` preset has one block per stage and 16 base channels.
    pub fn preset(name: &str) -> Result<ModelConfig> {
        let row = match name {
            "rmt-t" => PresetRow {
                blocks: [2, 2, 8, 2],
                channels: [64, 128, 256, 512],
                heads: [4, 4, 8, 16],
                ratios: [3.0; 4],
                decay_b: [6.0, 6.0, 8.0, 8.0],
            },
            "rmt-s" => PresetRow {
                blocks: [3, 4, 18, 4],
                channels: [64, 128, 256, 512],
                heads: [4, 4, 8, 16],
                ratios: [4.0, 4.0, 3.0, 3.0],
                decay_b: [6.0, 6.0, 8.0, 8.0],
            },
            "rmt-b" => PresetRow {
                blocks: [4, 8, 25, 8],
                channels: [80, 160, 320, 512],
                heads: [5, 5, 10, 16],
                ratios: [4.0, 4.0, 3.0, 3.0],
                decay_b: [7.0, 7.0, 8.0, 8.0],
            },
            "rmt-l" => PresetRow {
                blocks: [4, 8, 25, 8],
                channels: [112, 224, 448, 640],
                heads: [7, 7, 14, 20],
                ratios: [4.0, 4.0, 3.0, 3.0],
                decay_b: [8.0; 4],
            },
            "tiny" => PresetRow {
                blocks: [1; 4],
                channels: [16, 32, 64, 128],
                heads: [2, 2, 4, 8],
                ratios: [3.0; 4],
                decay_b: [6.0, 6.0, 8.0, 8.0],
            },
            other => {
                return Err(Error::Usage(format!(
                    "unknown preset {other:?}; available presets: {}",
                    PRESETS.join(", ")
                )))
            }
        };
        let stages = (0..4)
            .map(|i| StageConfig {
                num_blocks: row.blocks[i],
                channels: row.channels[i],
                heads: row.heads[i],
                ffn_ratio: row.ratios[i],
                decay_a: 2.0,
                decay_b: row.decay_b[i],
                decomposed: i < 3,
            })
            .collect();
        let (num_classes, input_resolution) = if name == "tiny" { (2, 32) } else { (1000, 224) };
        Ok(ModelConfig { stages, num_classes, input_resolution })
    }

    pub fn with_resolution(mut self, resolution: usize) -> ModelConfig {
        self.input_resolution = resolution;
        self
    }

    pub fn with_classes(mut self, num_classes: usize) -> ModelConfig {
        self.num_classes = num_classes;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.stages.len() != 4 {
            return config_err(format!("expected 4 stages, got {}", self.stages.len()));
        }
        for (i, s) in self.stages.iter().enumerate() {
            s.validate().map_err(|e| Error::Config(format!("stage {}: {e}", i + 1)))?;
        }
        if !self.stages[0].channels.is_multiple_of(2) {
            return config_err("stage-1 channels must be even (the stem starts at half width)");
        }
        if self.num_classes == 0 {
            return config_err("num_classes must be positive");
        }
        check_resolution(self.input_resolution)
    }

    pub fn from_json(text: &str) -> Result<ModelConfig> {
        let cfg: ModelConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn load(path: &Path) -> Result<ModelConfig> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        ModelConfig::from_json(&text)
    }
}

/// The stem divides the side by 4 and each of the three transitions by 2.
pub(crate) fn check_resolution(r: usize) -> Result<()> {
    if r == 0 || !r.is_multiple_of(32) {
        return config_err(format!(
            "input resolution {r} must be a positive multiple of 32 (stem /4, then three /2 transitions)"
        ));
    }
    Ok(())
}
