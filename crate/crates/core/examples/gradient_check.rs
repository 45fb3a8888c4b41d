//! Finite-difference check of tape gradients through the attention kernels
//! and a full RMT block.

use masa_kit::attention::{masa_decomposed, masa_full};
use masa_kit::blocks::{rmt_block, BlockConfig, BlockParams, ModelConfig};
use masa_kit::train::finite_diff_gradcheck;
use masa_kit::{GridShape, HasParams, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> masa_kit::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let grid = GridShape::new(2, 3)?;
    let inputs: Vec<Tensor> = (0..3).map(|_| Tensor::rand_uniform(&[6, 2], -1.0, 1.0, &mut rng)).collect();

    let full = finite_diff_gradcheck(|x| masa_full(&x[0], &x[1], &x[2], grid, 0.7)?.sum_all(), &inputs, 1e-6)?;
    let dec = finite_diff_gradcheck(|x| masa_decomposed(&x[0], &x[1], &x[2], grid, 0.7)?.sum_all(), &inputs, 1e-6)?;
    println!("masa_full:       {:.2e} over {} coordinates", full.max_rel_error, full.checked);
    println!("masa_decomposed: {:.2e} over {} coordinates", dec.max_rel_error, dec.checked);

    let stage = ModelConfig::preset("tiny")?.stages[0].clone();
    let cfg = BlockConfig::from_stage(&stage)?;
    let params = BlockParams::init(&cfg, &mut rng);
    let x = Tensor::rand_uniform(&[6, stage.channels], -1.0, 1.0, &mut rng);
    let report = finite_diff_gradcheck(
        |inp| rmt_block(&inp[0], grid, &params, &cfg)?.mul(&inp[0])?.sum_all(),
        &[x],
        1e-6,
    )?;
    println!(
        "rmt_block input:  {:.2e} (worst at coordinate {}: tape {:.6}, numeric {:.6})",
        report.max_rel_error, report.index, report.analytic, report.numeric
    );
    println!("block has {} parameters", params.num_params());
    Ok(())
}
