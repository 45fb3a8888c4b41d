//! Retention in its recurrent, parallel and bidirectional forms.
//!
//! The rotation factor of the original retention is taken as the identity,
//! so all three forms stay real-valued. They serve as baselines and as
//! oracles for each other.

use crate::decay::{decay_bidirectional_1d, decay_causal_1d};
use crate::error::{config_err, dim_err, Result};
use crate::tensor::Tensor;

fn check_qkv(q: &Tensor, k: &Tensor, v: &Tensor) -> Result<(usize, usize)> {
    if q.rank() != 2 || q.shape() != k.shape() || q.shape() != v.shape() {
        return dim_err(format!(
            "retention expects Q, K, V of one shape [L, d], got {:?}, {:?}, {:?}",
            q.shape(),
            k.shape(),
            v.shape()
        ));
    }
    Ok((q.shape()[0], q.shape()[1]))
}

/// `o_n = Q_n S_n` with the running state `S_n = γ S_{n-1} + K_nᵀ V_n`.
pub fn retention_recurrent(q: &Tensor, k: &Tensor, v: &Tensor, gamma: f64) -> Result<Tensor> {
    let (len, d) = check_qkv(q, k, v)?;
    if !(gamma > 0.0 && gamma < 1.0) {
        return config_err(format!("decay rate must lie in (0, 1), got {gamma}"));
    }
    let (qd, kd, vd) = (q.data(), k.data(), v.data());
    let mut state = vec![0.0; d * d];
    let mut out = Vec::with_capacity(len * d);
    for n in 0..len {
        let (kn, vn) = (&kd[n * d..(n + 1) * d], &vd[n * d..(n + 1) * d]);
        for (i, row) in state.chunks_mut(d).enumerate() {
            for (s, &vj) in row.iter_mut().zip(vn) {
                *s = gamma * *s + kn[i] * vj;
            }
        }
        let qn = &qd[n * d..(n + 1) * d];
        for j in 0..d {
            out.push((0..d).map(|i| qn[i] * state[i * d + j]).sum());
        }
    }
    Tensor::new(out, &[len, d])
}

/// `(Q Kᵀ ⊙ D) V` with the causal decay matrix.
pub fn retention_parallel(q: &Tensor, k: &Tensor, v: &Tensor, gamma: f64) -> Result<Tensor> {
    let (len, _) = check_qkv(q, k, v)?;
    let decay = decay_causal_1d(len, gamma)?;
    q.matmul(&k.transpose_last2()?)?.mul(&decay)?.matmul(v)
}

/// `(Q Kᵀ ⊙ D^Bi) V` with `D^Bi[n, m] = γ^|n-m|`.
pub fn bi_retention(q: &Tensor, k: &Tensor, v: &Tensor, gamma: f64) -> Result<Tensor> {
    let (len, _) = check_qkv(q, k, v)?;
    let decay = decay_bidirectional_1d(len, gamma)?;
    q.matmul(&k.transpose_last2()?)?.mul(&decay)?.matmul(v)
}
