//! Per-head decay rates of every preset, and the Kronecker factorization
//! that lets decomposed attention keep the Manhattan prior.

use masa_kit::blocks::{ModelConfig, PRESETS};
use masa_kit::decay::{decay_axial_pair, decay_manhattan_2d, gamma_schedule, kron};
use masa_kit::GridShape;

fn main() -> masa_kit::Result<()> {
    for name in PRESETS {
        let cfg = ModelConfig::preset(name)?;
        println!("{name}");
        for (i, s) in cfg.stages.iter().enumerate() {
            let spec = gamma_schedule(s.decay_a, s.decay_b, s.heads)?;
            let rates: Vec<String> = spec.gammas().iter().map(|g| format!("{g:.5}")).collect();
            println!("  stage {} ({} heads): {}", i + 1, s.heads, rates.join(" "));
        }
    }

    let grid = GridShape::new(3, 4)?;
    let gamma = 0.8;
    let d2 = decay_manhattan_2d(grid, gamma)?;
    let (dh, dw) = decay_axial_pair(grid, gamma)?;
    println!();
    println!("3x4 grid, gamma {gamma}: row of token (1, 1)");
    let n = grid.index(1, 1);
    for y in 0..grid.height {
        let row: Vec<String> = (0..grid.width).map(|x| format!("{:.3}", d2.at(&[n, grid.index(x, y)]))).collect();
        println!("  {}", row.join(" "));
    }
    println!("max |kron(D_H, D_W) - D_2d| = {:e}", kron(&dh, &dw)?.max_abs_diff(&d2)?);
    Ok(())
}
