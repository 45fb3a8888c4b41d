//! Decay schedules and decay matrices.
//!
//! Every head of a MaSA layer owns a decay rate `γ ∈ (0, 1)`. The weight a
//! query token gives a key token is multiplied by `γ^distance`, where the
//! distance is the 1D offset (retention) or the Manhattan distance on the
//! token grid (MaSA). Because `γ^(|Δx|+|Δy|) = γ^|Δy| · γ^|Δx|`, the 2D
//! matrix is the Kronecker product of the two axial matrices, which is what
//! lets the decomposed attention keep the full spatial prior.

use serde::{Deserialize, Serialize};

use crate::error::{config_err, dim_err, Result};
use crate::tensor::Tensor;

/// Per-head decay rates spread over the range `[a, b]`.
///
/// Head `i` (counted from 1) gets `γ_i = 1 - 2^(-a - (b - a)·i/N)`, so the
/// rates increase with the head index and the last head sits exactly at
/// `1 - 2^-b`.
#[derive(Clone, Debug, PartialEq)]
pub struct DecaySpec {
    a: f64,
    b: f64,
    gammas: Vec<f64>,
}

/// Builds the per-head decay rates for `num_heads` heads over `[a, b]`.
pub fn gamma_schedule(a: f64, b: f64, num_heads: usize) -> Result<DecaySpec> {
    if !(a.is_finite() && b.is_finite() && a > 0.0 && a < b) {
        return config_err(format!("decay range needs 0 < a < b, got a={a}, b={b}"));
    }
    if num_heads == 0 {
        return config_err("decay schedule needs at least one head");
    }
    let n = num_heads as f64;
    let gammas = (1..=num_heads)
        .map(|i| 1.0 - 2f64.powf(-a - (b - a) * i as f64 / n))
        .collect();
    Ok(DecaySpec { a, b, gammas })
}

impl DecaySpec {
    pub fn a(&self) -> f64 {
        self.a
    }

    pub fn b(&self) -> f64 {
        self.b
    }

    pub fn num_heads(&self) -> usize {
        self.gammas.len()
    }

    pub fn gammas(&self) -> &[f64] {
        &self.gammas
    }

    /// Rate of head `head` (0-based).
    pub fn gamma(&self, head: usize) -> f64 {
        self.gammas[head]
    }
}

/// Token grid of `height` rows and `width` columns.
///
/// Flat token `n` sits at column `x = n mod width` and row `y = n div width`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GridShape {
    pub height: usize,
    pub width: usize,
}

impl GridShape {
    pub fn new(height: usize, width: usize) -> Result<GridShape> {
        if height == 0 || width == 0 {
            return dim_err(format!("grid {height}x{width} has an empty side"));
        }
        Ok(GridShape { height, width })
    }

    pub fn square(side: usize) -> Result<GridShape> {
        GridShape::new(side, side)
    }

    pub fn num_tokens(&self) -> usize {
        self.height * self.width
    }

    /// `(x, y)` coordinates of flat token `n`.
    pub fn coords(&self, n: usize) -> (usize, usize) {
        (n % self.width, n / self.width)
    }

    pub fn index(&self, x: usize, y: usize) -> usize {
        y * self.width + x
    }

    pub fn manhattan(&self, n: usize, m: usize) -> usize {
        let ((xn, yn), (xm, ym)) = (self.coords(n), self.coords(m));
        xn.abs_diff(xm) + yn.abs_diff(ym)
    }
}

fn check_gamma(gamma: f64) -> Result<()> {
    if gamma > 0.0 && gamma < 1.0 {
        Ok(())
    } else {
        config_err(format!("decay rate must lie in (0, 1), got {gamma}"))
    }
}

fn check_len(len: usize) -> Result<()> {
    if len == 0 {
        return dim_err("decay matrix needs at least one position");
    }
    Ok(())
}

fn from_fn(rows: usize, cols: usize, f: impl Fn(usize, usize) -> f64) -> Tensor {
    let data = (0..rows * cols).map(|i| f(i / cols, i % cols)).collect();
    Tensor::new(data, &[rows, cols]).expect("decay entries are finite")
}

/// Causal decay `D[n, m] = γ^(n-m)` for `n >= m`, zero above the diagonal.
pub fn decay_causal_1d(len: usize, gamma: f64) -> Result<Tensor> {
    check_gamma(gamma)?;
    check_len(len)?;
    Ok(from_fn(len, len, |n, m| {
        if n >= m {
            gamma.powi((n - m) as i32)
        } else {
            0.0
        }
    }))
}

/// Bidirectional decay `D[n, m] = γ^|n-m|`.
pub fn decay_bidirectional_1d(len: usize, gamma: f64) -> Result<Tensor> {
    check_gamma(gamma)?;
    check_len(len)?;
    Ok(from_fn(len, len, |n, m| gamma.powi(n.abs_diff(m) as i32)))
}

/// Manhattan decay `D[n, m] = γ^(|x_n-x_m| + |y_n-y_m|)` over the flattened grid.
pub fn decay_manhattan_2d(grid: GridShape, gamma: f64) -> Result<Tensor> {
    check_gamma(gamma)?;
    let n = grid.num_tokens();
    Ok(from_fn(n, n, |i, j| gamma.powi(grid.manhattan(i, j) as i32)))
}

/// Height and width decay matrices `(D^H, D^W)` of the decomposed form.
pub fn decay_axial_pair(grid: GridShape, gamma: f64) -> Result<(Tensor, Tensor)> {
    Ok((
        decay_bidirectional_1d(grid.height, gamma)?,
        decay_bidirectional_1d(grid.width, gamma)?,
    ))
}

/// Kronecker product of two matrices.
pub fn kron(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.rank() != 2 || b.rank() != 2 {
        return dim_err(format!("kron needs matrices, got {:?} and {:?}", a.shape(), b.shape()));
    }
    let (ar, ac) = (a.shape()[0], a.shape()[1]);
    let (br, bc) = (b.shape()[0], b.shape()[1]);
    Ok(from_fn(ar * br, ac * bc, |i, j| {
        a.at(&[i / br, j / bc]) * b.at(&[i % br, j % bc])
    }))
}

/// Decay applied by an attention kernel.
///
/// `Off` multiplies every weight by one, which reduces MaSA to plain softmax
/// attention. Decay-matrix constructors reject `γ = 1`; this is the only way
/// to ask for no decay.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum DecayRate {
    Gamma(f64),
    Off,
}

impl From<f64> for DecayRate {
    fn from(gamma: f64) -> Self {
        DecayRate::Gamma(gamma)
    }
}

impl DecayRate {
    pub fn manhattan_2d(self, grid: GridShape) -> Result<Tensor> {
        match self {
            DecayRate::Gamma(g) => decay_manhattan_2d(grid, g),
            DecayRate::Off => Ok(Tensor::ones(&[grid.num_tokens(), grid.num_tokens()])),
        }
    }

    pub fn axial_pair(self, grid: GridShape) -> Result<(Tensor, Tensor)> {
        match self {
            DecayRate::Gamma(g) => decay_axial_pair(grid, g),
            DecayRate::Off => Ok((
                Tensor::ones(&[grid.height, grid.height]),
                Tensor::ones(&[grid.width, grid.width]),
            )),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;
    use proptest::prelude::*;

    fn assert_close(t: &Tensor, expect: &[f64]) {
        assert_eq!(t.numel(), expect.len());
        for (a, b) in t.data().iter().zip(expect) {
            assert!((a - b).abs() < 1e-15, "{:?} vs {expect:?}", t.data());
        }
    }

    #[test]
    fn schedule_examples() {
        let s = gamma_schedule(2.0, 8.0, 4).unwrap();
        let expect = [
            1.0 - 2f64.powf(-3.5),
            1.0 - 2f64.powi(-5),
            1.0 - 2f64.powf(-6.5),
            1.0 - 2f64.powi(-8),
        ];
        assert_eq!(s.gammas(), &expect);
        for (g, approx) in s.gammas().iter().zip([0.911612, 0.968750, 0.988951, 0.996094]) {
            assert!((g - approx).abs() < 5e-7);
        }
        assert_eq!(gamma_schedule(2.0, 8.0, 1).unwrap().gammas(), &[0.99609375]);
        assert_eq!(s.gamma(3), 1.0 - 2f64.powi(-8));
    }

    #[test]
    fn schedule_rejects_bad_ranges() {
        assert!(matches!(gamma_schedule(8.0, 2.0, 4), Err(Error::Config(_))));
        assert!(matches!(gamma_schedule(2.0, 2.0, 4), Err(Error::Config(_))));
        assert!(matches!(gamma_schedule(2.0, 8.0, 0), Err(Error::Config(_))));
        assert!(matches!(gamma_schedule(-1.0, 8.0, 2), Err(Error::Config(_))));
    }

    #[test]
    fn causal_examples() {
        assert_close(&decay_causal_1d(1, 0.3).unwrap(), &[1.0]);
        assert_close(
            &decay_causal_1d(3, 0.5).unwrap(),
            &[1.0, 0.0, 0.0, 0.5, 1.0, 0.0, 0.25, 0.5, 1.0],
        );
        assert_eq!(decay_causal_1d(2, 0.99).unwrap().at(&[0, 1]), 0.0);
        assert!(matches!(decay_causal_1d(3, 1.0), Err(Error::Config(_))));
        assert!(matches!(decay_causal_1d(3, 0.0), Err(Error::Config(_))));
    }

    #[test]
    fn bidirectional_examples() {
        assert_close(
            &decay_bidirectional_1d(3, 0.5).unwrap(),
            &[1.0, 0.5, 0.25, 0.5, 1.0, 0.5, 0.25, 0.5, 1.0],
        );
        let d = decay_bidirectional_1d(5, 0.7).unwrap();
        let dt = d.transpose_last2().unwrap();
        assert_eq!(d.data(), dt.data());
        for i in 0..5 {
            assert_eq!(d.at(&[i, i]), 1.0);
        }
        assert!(matches!(decay_bidirectional_1d(2, 1.5), Err(Error::Config(_))));
    }

    #[test]
    fn manhattan_examples() {
        let one = GridShape::new(1, 1).unwrap();
        assert_close(&decay_manhattan_2d(one, 0.5).unwrap(), &[1.0]);

        let g = GridShape::new(2, 2).unwrap();
        assert_eq!(
            (0..4).map(|n| g.coords(n)).collect::<Vec<_>>(),
            vec![(0, 0), (1, 0), (0, 1), (1, 1)]
        );
        assert_close(
            &decay_manhattan_2d(g, 0.5).unwrap(),
            &[
                1.0, 0.5, 0.5, 0.25, //
                0.5, 1.0, 0.25, 0.5, //
                0.5, 0.25, 1.0, 0.5, //
                0.25, 0.5, 0.5, 1.0,
            ],
        );

        let g = GridShape::new(3, 4).unwrap();
        let d = decay_manhattan_2d(g, 0.9).unwrap();
        assert!((d.at(&[g.index(0, 0), g.index(3, 2)]) - 0.59049).abs() < 1e-15);
    }

    #[test]
    fn axial_examples() {
        let (dh, dw) = decay_axial_pair(GridShape::new(2, 3).unwrap(), 0.5).unwrap();
        assert_close(&dh, &[1.0, 0.5, 0.5, 1.0]);
        assert_close(&dw, &[1.0, 0.5, 0.25, 0.5, 1.0, 0.5, 0.25, 0.5, 1.0]);
        let (dh, _) = decay_axial_pair(GridShape::new(1, 5).unwrap(), 0.5).unwrap();
        assert_close(&dh, &[1.0]);
    }

    #[test]
    fn grid_index_map_is_a_bijection() {
        let g = GridShape::new(3, 5).unwrap();
        let mut seen = vec![false; g.num_tokens()];
        for n in 0..g.num_tokens() {
            let (x, y) = g.coords(n);
            assert!(x < 5 && y < 3);
            assert_eq!(g.index(x, y), n);
            seen[n] = true;
        }
        assert!(seen.iter().all(|&s| s));
        assert!(GridShape::new(0, 3).is_err());
    }

    #[test]
    fn factorization_holds_on_small_grids() {
        for h in 1..=8 {
            for w in 1..=8 {
                for gamma in [0.25, 0.5, 0.9] {
                    let grid = GridShape::new(h, w).unwrap();
                    let full = decay_manhattan_2d(grid, gamma).unwrap();
                    let (dh, dw) = decay_axial_pair(grid, gamma).unwrap();
                    // entrywise form of the factorization
                    for n in 0..grid.num_tokens() {
                        for m in 0..grid.num_tokens() {
                            let ((xn, yn), (xm, ym)) = (grid.coords(n), grid.coords(m));
                            let prod = dh.at(&[yn, ym]) * dw.at(&[xn, xm]);
                            assert!((full.at(&[n, m]) - prod).abs() < 1e-12);
                        }
                    }
                    assert!(kron(&dh, &dw).unwrap().max_abs_diff(&full).unwrap() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn disabled_decay_is_all_ones() {
        let grid = GridShape::new(2, 3).unwrap();
        assert!(DecayRate::Off.manhattan_2d(grid).unwrap().data().iter().all(|&v| v == 1.0));
        let (dh, dw) = DecayRate::Off.axial_pair(grid).unwrap();
        assert_eq!((dh.shape(), dw.shape()), (&[2, 2][..], &[3, 3][..]));
    }

    proptest! {
        #[test]
        fn schedule_increasing_and_bounded(a in 0.5f64..6.0, span in 0.1f64..6.0, n in 1usize..24) {
            let b = a + span;
            let s = gamma_schedule(a, b, n).unwrap();
            for w in s.gammas().windows(2) {
                prop_assert!(w[0] < w[1]);
            }
            let lo = 1.0 - 2f64.powf(-a);
            let hi = 1.0 - 2f64.powf(-b);
            for &g in s.gammas() {
                prop_assert!(g > lo && g <= hi + 1e-15 && g < 1.0);
            }
            prop_assert!((s.gammas().last().unwrap() - hi).abs() < 1e-15);
        }

        #[test]
        fn manhattan_decay_strictly_decreases_with_distance(h in 1usize..6, w in 1usize..6, gamma in 0.05f64..0.95) {
            let grid = GridShape::new(h, w).unwrap();
            let d = decay_manhattan_2d(grid, gamma).unwrap();
            let n = grid.num_tokens();
            for i in 0..n {
                for j in 0..n {
                    let v = d.at(&[i, j]);
                    prop_assert!(v > 0.0 && v <= 1.0);
                    prop_assert_eq!(v, d.at(&[j, i]));
                    for k in 0..n {
                        if grid.manhattan(i, j) < grid.manhattan(i, k) {
                            prop_assert!(v > d.at(&[i, k]));
                        }
                    }
                }
            }
        }

        #[test]
        fn causal_is_lower_triangle_of_bidirectional(len in 1usize..12, gamma in 0.05f64..0.95) {
            let c = decay_causal_1d(len, gamma).unwrap();
            let b = decay_bidirectional_1d(len, gamma).unwrap();
            for n in 0..len {
                for m in 0..=n {
                    prop_assert_eq!(c.at(&[n, m]), b.at(&[n, m]));
                }
            }
        }

        #[test]
        fn manhattan_decay_is_translation_invariant(h in 2usize..6, w in 2usize..6, gamma in 0.05f64..0.95) {
            let grid = GridShape::new(h, w).unwrap();
            let d = decay_manhattan_2d(grid, gamma).unwrap();
            // shifting both tokens by (+1, +1) inside the grid keeps the weight
            for n in 0..grid.num_tokens() {
                for m in 0..grid.num_tokens() {
                    let ((xn, yn), (xm, ym)) = (grid.coords(n), grid.coords(m));
                    if xn + 1 < w && xm + 1 < w && yn + 1 < h && ym + 1 < h {
                        let (n2, m2) = (grid.index(xn + 1, yn + 1), grid.index(xm + 1, ym + 1));
                        prop_assert_eq!(d.at(&[n, m]), d.at(&[n2, m2]));
                    }
                }
            }
        }
    }
}
