//! Single-head Manhattan self-attention kernels and local context enhancement.
//!
//! Inputs are token matrices `[N, d]` laid out row-major over a
//! [`GridShape`]. Logit scaling is the caller's business: the kernels compute
//! `Softmax(Q Kᵀ)` exactly as given.

use serde::{Deserialize, Serialize};

use crate::decay::{DecayRate, GridShape};
use crate::error::{dim_err, Result};
use crate::tensor::Tensor;

fn check_tokens(q: &Tensor, k: &Tensor, v: &Tensor, grid: GridShape) -> Result<usize> {
    if q.rank() != 2 || q.shape() != k.shape() || q.shape() != v.shape() {
        return dim_err(format!(
            "attention expects Q, K, V of one shape [N, d], got {:?}, {:?}, {:?}",
            q.shape(),
            k.shape(),
            v.shape()
        ));
    }
    if q.shape()[0] != grid.num_tokens() {
        return dim_err(format!(
            "{} tokens do not fill a {}x{} grid",
            q.shape()[0],
            grid.height,
            grid.width
        ));
    }
    Ok(q.shape()[1])
}

/// Full MaSA: `(Softmax(Q Kᵀ) ⊙ D^2d) V`.
///
/// The decay is applied after the softmax and the rows are not renormalized.
pub fn masa_full(
    q: &Tensor,
    k: &Tensor,
    v: &Tensor,
    grid: GridShape,
    decay: impl Into<DecayRate>,
) -> Result<Tensor> {
    check_tokens(q, k, v, grid)?;
    let d2 = decay.into().manhattan_2d(grid)?;
    q.matmul(&k.transpose_last2()?)?
        .softmax_last()?
        .mul(&d2)?
        .matmul(v)
}

/// Decomposed MaSA: width attention inside every row, then height attention
/// inside every column, each with its own 1D decay.
pub fn masa_decomposed(
    q: &Tensor,
    k: &Tensor,
    v: &Tensor,
    grid: GridShape,
    decay: impl Into<DecayRate>,
) -> Result<Tensor> {
    let d = check_tokens(q, k, v, grid)?;
    let (h, w) = (grid.height, grid.width);
    let (dh, dw) = decay.into().axial_pair(grid)?;

    // [H, W, d]: one batch entry per image row
    let (q_rows, k_rows, v_rows) = (q.reshape(&[h, w, d])?, k.reshape(&[h, w, d])?, v.reshape(&[h, w, d])?);
    let attn_w = q_rows
        .matmul(&k_rows.transpose_last2()?)?
        .softmax_last()?
        .mul(&dw)?;
    let z = attn_w.matmul(&v_rows)?;

    // [W, H, d]: one batch entry per image column
    let q_cols = q_rows.permute(&[1, 0, 2])?;
    let k_cols = k_rows.permute(&[1, 0, 2])?;
    let attn_h = q_cols
        .matmul(&k_cols.transpose_last2()?)?
        .softmax_last()?
        .mul(&dh)?;
    let out = attn_h.matmul(&z.permute(&[1, 0, 2])?)?;
    out.permute(&[1, 0, 2])?.reshape(&[h * w, d])
}

/// Plain `Softmax(Q Kᵀ) V` over all tokens.
pub fn softmax_attention(q: &Tensor, k: &Tensor, v: &Tensor) -> Result<Tensor> {
    q.matmul(&k.transpose_last2()?)?.softmax_last()?.matmul(v)
}

/// Local context enhancement: depthwise "same" convolution of `V` laid out
/// on the grid, `kernel[d, k, k]` with odd `k`.
pub fn lce(v: &Tensor, grid: GridShape, kernel: &Tensor) -> Result<Tensor> {
    if v.rank() != 2 || v.shape()[0] != grid.num_tokens() {
        return dim_err(format!(
            "lce expects V[{}, d] for a {}x{} grid, got {:?}",
            grid.num_tokens(),
            grid.height,
            grid.width,
            v.shape()
        ));
    }
    let d = v.shape()[1];
    tokens_to_image(v, grid)?
        .depthwise_conv2d(kernel)?
        .permute(&[1, 2, 0])?
        .reshape(&[grid.num_tokens(), d])
}

/// `[N, C]` tokens to a `[C, H, W]` image.
pub fn tokens_to_image(x: &Tensor, grid: GridShape) -> Result<Tensor> {
    if x.rank() != 2 || x.shape()[0] != grid.num_tokens() {
        return dim_err(format!(
            "{:?} is not a token matrix for a {}x{} grid",
            x.shape(),
            grid.height,
            grid.width
        ));
    }
    x.reshape(&[grid.height, grid.width, x.shape()[1]])?.permute(&[2, 0, 1])
}

/// `[C, H, W]` image to `[N, C]` tokens and the grid they cover.
pub fn image_to_tokens(x: &Tensor) -> Result<(Tensor, GridShape)> {
    if x.rank() != 3 {
        return dim_err(format!("expected an image [C, H, W], got {:?}", x.shape()));
    }
    let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    Ok((x.permute(&[1, 2, 0])?.reshape(&[h * w, c])?, GridShape::new(h, w)?))
}

/// Which attention kernel a head runs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttentionMode {
    Full,
    Decomposed,
    Vanilla,
}

impl AttentionMode {
    pub const ALL: [AttentionMode; 3] = [AttentionMode::Full, AttentionMode::Decomposed, AttentionMode::Vanilla];

    pub fn name(self) -> &'static str {
        match self {
            AttentionMode::Full => "full",
            AttentionMode::Decomposed => "decomposed",
            AttentionMode::Vanilla => "vanilla",
        }
    }

    /// Multiply-accumulates of the score and apply products for one head.
    ///
    /// Full and vanilla attention cost `2·N²·d`; the decomposed form costs
    /// `2·N·(H + W)·d`. Softmax and the decay product are elementwise and
    /// not counted.
    pub fn analytic_macs(self, grid: GridShape, head_dim: usize) -> u64 {
        let n = grid.num_tokens() as u64;
        let d = head_dim as u64;
        match self {
            AttentionMode::Full | AttentionMode::Vanilla => 2 * n * n * d,
            AttentionMode::Decomposed => 2 * n * (grid.height + grid.width) as u64 * d,
        }
    }

    pub fn run(self, q: &Tensor, k: &Tensor, v: &Tensor, grid: GridShape, decay: DecayRate) -> Result<Tensor> {
        match self {
            AttentionMode::Full => masa_full(q, k, v, grid, decay),
            AttentionMode::Decomposed => masa_decomposed(q, k, v, grid, decay),
            AttentionMode::Vanilla => {
                check_tokens(q, k, v, grid)?;
                softmax_attention(q, k, v)
            }
        }
    }
}

impl std::str::FromStr for AttentionMode {
    type Err = crate::error::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(AttentionMode::Full),
            "decomposed" => Ok(AttentionMode::Decomposed),
            "vanilla" => Ok(AttentionMode::Vanilla),
            other => Err(crate::error::Error::Usage(format!(
                "unknown attention mode {other:?} (expected full, decomposed or vanilla)"
            ))),
        }
    }
}
