//! Builds a backbone from a JSON configuration and classifies one image.

use masa_kit::blocks::{build_backbone, count_params, ModelConfig};
use masa_kit::tensor::no_grad;
use masa_kit::train::synth_dataset;

fn main() -> masa_kit::Result<()> {
    let json = ModelConfig::preset("tiny")?.with_classes(4).to_json()?;
    println!("{json}");
    let cfg = ModelConfig::from_json(&json)?;
    let model = build_backbone(&cfg, 0)?;
    println!("{} parameters", count_params(&model));

    let sample = &synth_dataset(1, 4, cfg.input_resolution, cfg.num_classes)?[3];
    let logits = no_grad(|| model.forward(&sample.image))?;
    println!("label {} -> logits {:?}", sample.label, logits.data());
    Ok(())
}
