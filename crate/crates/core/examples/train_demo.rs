//! Trains the tiny preset on synthetic two-class images and prints the
//! evaluation curve.
//!
//! cargo run --release --example train_demo -- [seed] [steps]

use masa_kit::blocks::ModelConfig;
use masa_kit::train::{train_loop, DataConfig, TrainConfig};

fn main() -> masa_kit::Result<()> {
    let mut args = std::env::args().skip(1);
    let seed: u64 = args.next().map_or(7, |s| s.parse().expect("seed must be an integer"));
    let steps: usize = args.next().map_or(300, |s| s.parse().expect("steps must be an integer"));

    let model = ModelConfig::preset("tiny")?;
    let train = TrainConfig { steps, seed, ..TrainConfig::default() };
    let report = train_loop(&model, &DataConfig::demo(seed), &train)?;

    println!("step  loss      accuracy");
    for row in std::iter::once(&report.initial).chain(&report.rows) {
        println!("{:>4}  {:.6}  {:.3}", row.step, row.loss, row.train_accuracy);
    }
    Ok(())
}
