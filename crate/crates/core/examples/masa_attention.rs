//! Full, decomposed and undecayed attention on one grid, then a multi-head
//! MaSA layer with local context enhancement.

use masa_kit::attention::{masa_decomposed, masa_full, softmax_attention, MaSA, MaSAConfig, MaSAParams};
use masa_kit::tensor::counter::count_macs;
use masa_kit::{DecayRate, GridShape, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> masa_kit::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let grid = GridShape::new(8, 8)?;
    let (n, d) = (grid.num_tokens(), 16);
    let q = Tensor::rand_uniform(&[n, d], -1.0, 1.0, &mut rng);
    let k = Tensor::rand_uniform(&[n, d], -1.0, 1.0, &mut rng);
    let v = Tensor::rand_uniform(&[n, d], -1.0, 1.0, &mut rng);

    let (full, full_macs) = count_macs(|| masa_full(&q, &k, &v, grid, 0.9));
    let (dec, dec_macs) = count_macs(|| masa_decomposed(&q, &k, &v, grid, 0.9));
    let (full, dec) = (full?, dec?);
    println!("8x8 grid, d={d}");
    println!("  full MaSA:       {full_macs} MACs");
    println!("  decomposed MaSA: {dec_macs} MACs");
    println!("  outputs differ by up to {:.3e} (the two forms are not equal in general)", full.max_abs_diff(&dec)?);

    let plain = softmax_attention(&q, &k, &v)?;
    let undecayed = masa_full(&q, &k, &v, grid, DecayRate::Off)?;
    println!("  no-decay MaSA vs softmax attention: {:e}", undecayed.max_abs_diff(&plain)?);

    let config = MaSAConfig::new(32, 4, true, 2.0, 6.0)?;
    println!("layer decay rates: {:?}", config.decay.gammas());
    let layer = MaSA { params: MaSAParams::init(&config, &mut rng), config };
    let x = Tensor::rand_uniform(&[n, 32], -1.0, 1.0, &mut rng);
    let y = layer.forward(&x, grid)?;
    println!("layer output {:?}, first token {:?}", y.shape(), &y.data()[..4]);
    Ok(())
}
