use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Standard deviation of the per-pixel noise added by [`synth_dataset`].
pub const NOISE_STD: f64 = 0.15;

/// One labelled `[3, R, R]` image.
#[derive(Clone, Debug)]
pub struct SynthSample {
    pub image: Tensor,
    pub label: usize,
}

/// `n` images of side `resolution` over `num_classes` classes.
///
/// Sample `i` has label `i mod num_classes`. Class `k` draws a linear
/// intensity ramp oriented at `π·k/num_classes` with a random amplitude,
/// adds a class-specific brightness offset spread over `[-0.3, 0.3]`, and
/// Gaussian noise of [`NOISE_STD`] per pixel. The three channels carry the
/// same pattern at different gains.
pub fn synth_dataset(seed: u64, n: usize, resolution: usize, num_classes: usize) -> Result<Vec<SynthSample>> {
    if n == 0 || resolution < 2 || num_classes == 0 {
        return Err(Error::Usage(format!(
            "synthetic data needs n >= 1, resolution >= 2 and at least one class (got {n}, {resolution}, {num_classes})"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, NOISE_STD).expect("positive std");
    let r = resolution;
    let span = (r - 1) as f64;
    (0..n)
        .map(|i| {
            let label = i % num_classes;
            let angle = std::f64::consts::PI * label as f64 / num_classes as f64;
            let (cos, sin) = (angle.cos(), angle.sin());
            let offset = if num_classes > 1 {
                0.6 * label as f64 / (num_classes - 1) as f64 - 0.3
            } else {
                0.0
            };
            let amp: f64 = rng.random_range(0.5..1.5);
            let mut data = Vec::with_capacity(3 * r * r);
            for gain in [1.0, 0.8, 0.6] {
                for y in 0..r {
                    for x in 0..r {
                        let (u, v) = (x as f64 / span - 0.5, y as f64 / span - 0.5);
                        let ramp = amp * (cos * u + sin * v);
                        data.push(gain * ramp + offset + noise.sample(&mut rng));
                    }
                }
            }
            Ok(SynthSample { image: Tensor::new(data, &[3, r, r])?, label })
        })
        .collect()
}
