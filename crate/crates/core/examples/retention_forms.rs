//! Recurrent, parallel and bidirectional retention on one random sequence.

use masa_kit::attention::{bi_retention, retention_parallel, retention_recurrent};
use masa_kit::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> masa_kit::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (len, d, gamma) = (12, 4, 0.9);
    let q = Tensor::rand_uniform(&[len, d], -1.0, 1.0, &mut rng);
    let k = Tensor::rand_uniform(&[len, d], -1.0, 1.0, &mut rng);
    let v = Tensor::rand_uniform(&[len, d], -1.0, 1.0, &mut rng);

    let rec = retention_recurrent(&q, &k, &v, gamma)?;
    let par = retention_parallel(&q, &k, &v, gamma)?;
    let bi = bi_retention(&q, &k, &v, gamma)?;

    println!("recurrent vs parallel: max abs diff {:e}", rec.max_abs_diff(&par)?);
    // the last position sees every key in both forms
    let last = len - 1;
    println!("last position, causal:        {:?}", &par.data()[last * d..]);
    println!("last position, bidirectional: {:?}", &bi.data()[last * d..]);
    println!("first position, causal:        {:?}", &par.data()[..d]);
    println!("first position, bidirectional: {:?}", &bi.data()[..d]);
    Ok(())
}
