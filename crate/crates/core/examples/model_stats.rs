//! Parameter and MAC accounting for every preset, with a per-stage table.
//!
//! cargo run --example model_stats -- [resolution]

use masa_kit::bench::format_model_stats;
use masa_kit::blocks::{model_stats, ModelConfig, PRESETS};

fn main() -> masa_kit::Result<()> {
    let resolution: Option<usize> = std::env::args().nth(1).map(|s| s.parse().expect("resolution must be an integer"));
    for name in PRESETS {
        let cfg = ModelConfig::preset(name)?;
        let stats = model_stats(&cfg, resolution.unwrap_or(cfg.input_resolution))?;
        println!("{}", format_model_stats(name, &stats));
    }
    Ok(())
}
