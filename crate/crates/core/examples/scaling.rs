//! Attention cost as the grid grows: analytic MACs (checked against the
//! counts recorded while running) and median wall time.

use masa_kit::bench::{scaling, Scaling};

fn main() -> masa_kit::Result<()> {
    let args = Scaling { sides: vec![4, 8, 16, 24, 32], head_dim: 16, ..Scaling::default() };
    let outcome = scaling(&args)?;
    println!("{:<11} {:>5} {:>14} {:>12}", "mode", "side", "MACs", "median ns");
    for r in &outcome.records {
        println!("{:<11} {:>5} {:>14} {:>12}", r.mode.name(), r.height, r.analytic_macs, r.median_ns);
    }
    Ok(())
}
