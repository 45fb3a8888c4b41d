use std::cell::Cell;
use std::collections::{HashMap, HashSet};
use std::sync::atomic::Ordering;

use super::kernels::{self, ConvGeom};
use super::{Inner, Tensor};
use crate::error::{Error, Result};

thread_local! {
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
}

/// Whether operations on this thread currently record history.
pub fn is_grad_enabled() -> bool {
    GRAD_ENABLED.with(|c| c.get())
}

/// Runs `f` without recording operations, even on tracked inputs.
pub fn no_grad<R>(f: impl FnOnce() -> R) -> R {
    struct Restore(bool);
    impl Drop for Restore {
        fn drop(&mut self) {
            GRAD_ENABLED.with(|c| c.set(self.0));
        }
    }
    let _restore = Restore(GRAD_ENABLED.with(|c| c.replace(false)));
    f()
}

/// Recorded operation with whatever the adjoint needs beyond the operands.
pub(crate) enum Op {
    /// Broadcast maps are `None` when the operand already has the output shape.
    Add { map_a: Option<Vec<usize>>, map_b: Option<Vec<usize>> },
    Sub { map_a: Option<Vec<usize>>, map_b: Option<Vec<usize>> },
    Mul { map_a: Option<Vec<usize>>, map_b: Option<Vec<usize>> },
    Scale(f64),
    AddScalar,
    MatMul { batch_a: Vec<usize>, batch_b: Vec<usize>, m: usize, k: usize, n: usize },
    Permute { axes: Vec<usize> },
    Reshape,
    Softmax { cols: usize },
    SumAll,
    MeanAxis { axis: usize },
    LayerNorm { xhat: Vec<f64>, rstd: Vec<f64>, cols: usize },
    Gelu,
    Conv2d(ConvGeom),
    NarrowLast { start: usize, cols: usize },
    ConcatLast { widths: Vec<usize> },
    CrossEntropy { probs: Vec<f64>, label: usize },
}

fn reduce_broadcast(g: &[f64], map: &Option<Vec<usize>>, numel: usize, sign: f64) -> Vec<f64> {
    match map {
        None => g.iter().map(|v| sign * v).collect(),
        Some(map) => {
            let mut out = vec![0.0; numel];
            for (&src, &gv) in map.iter().zip(g) {
                out[src] += sign * gv;
            }
            out
        }
    }
}

#[inline]
fn src(map: &Option<Vec<usize>>, i: usize) -> usize {
    map.as_ref().map_or(i, |m| m[i])
}

fn gelu_derivative(x: f64) -> f64 {
    let cdf = 0.5 * (1.0 + libm::erf(x / std::f64::consts::SQRT_2));
    let pdf = (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
    cdf + x * pdf
}

/// Adjoints of `parents` given the adjoint `g` of the output.
fn adjoints(op: &Op, parents: &[Tensor], out: &Inner, g: &[f64]) -> Vec<Option<Vec<f64>>> {
    let wants = |i: usize| parents[i].requires_grad();
    match op {
        Op::Add { map_a, map_b } => vec![
            wants(0).then(|| reduce_broadcast(g, map_a, parents[0].numel(), 1.0)),
            wants(1).then(|| reduce_broadcast(g, map_b, parents[1].numel(), 1.0)),
        ],
        Op::Sub { map_a, map_b } => vec![
            wants(0).then(|| reduce_broadcast(g, map_a, parents[0].numel(), 1.0)),
            wants(1).then(|| reduce_broadcast(g, map_b, parents[1].numel(), -1.0)),
        ],
        Op::Mul { map_a, map_b } => {
            let (a, b) = (parents[0].data(), parents[1].data());
            let ga = wants(0).then(|| {
                let mut out = vec![0.0; a.len()];
                for (i, &gv) in g.iter().enumerate() {
                    out[src(map_a, i)] += gv * b[src(map_b, i)];
                }
                out
            });
            let gb = wants(1).then(|| {
                let mut out = vec![0.0; b.len()];
                for (i, &gv) in g.iter().enumerate() {
                    out[src(map_b, i)] += gv * a[src(map_a, i)];
                }
                out
            });
            vec![ga, gb]
        }
        Op::Scale(c) => vec![Some(g.iter().map(|v| c * v).collect())],
        Op::AddScalar | Op::Reshape => vec![Some(g.to_vec())],
        Op::MatMul { batch_a, batch_b, m, k, n } => {
            let (m, k, n) = (*m, *k, *n);
            let (a, b) = (parents[0].data(), parents[1].data());
            let mut ga = wants(0).then(|| vec![0.0; a.len()]);
            let mut gb = wants(1).then(|| vec![0.0; b.len()]);
            for (ob, (&ia, &ib)) in batch_a.iter().zip(batch_b).enumerate() {
                let g_blk = &g[ob * m * n..(ob + 1) * m * n];
                if let Some(ga) = ga.as_mut() {
                    let b_blk = &b[ib * k * n..(ib + 1) * k * n];
                    kernels::gemm_nt(g_blk, b_blk, &mut ga[ia * m * k..(ia + 1) * m * k], m, k, n);
                }
                if let Some(gb) = gb.as_mut() {
                    let a_blk = &a[ia * m * k..(ia + 1) * m * k];
                    kernels::gemm_tn(a_blk, g_blk, &mut gb[ib * k * n..(ib + 1) * k * n], m, k, n);
                }
            }
            vec![ga, gb]
        }
        Op::Permute { axes } => {
            let mut inverse = vec![0; axes.len()];
            for (i, &a) in axes.iter().enumerate() {
                inverse[a] = i;
            }
            vec![Some(kernels::permute(g, &out.shape, &inverse).0)]
        }
        Op::Softmax { cols } => {
            let mut gin = vec![0.0; g.len()];
            for ((gi, gr), yr) in gin
                .chunks_mut(*cols)
                .zip(g.chunks(*cols))
                .zip(out.data.chunks(*cols))
            {
                let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                for ((o, &gv), &yv) in gi.iter_mut().zip(gr).zip(yr) {
                    *o = yv * (gv - dot);
                }
            }
            vec![Some(gin)]
        }
        Op::SumAll => vec![Some(vec![g[0]; parents[0].numel()])],
        Op::MeanAxis { axis } => {
            let shape = parents[0].shape();
            let len = shape[*axis];
            let inner: usize = shape[axis + 1..].iter().product();
            let mut gin = vec![0.0; parents[0].numel()];
            for (blk_i, blk) in gin.chunks_mut(len * inner).enumerate() {
                let g_blk = &g[blk_i * inner..(blk_i + 1) * inner];
                for row in blk.chunks_mut(inner) {
                    for (o, &gv) in row.iter_mut().zip(g_blk) {
                        *o = gv / len as f64;
                    }
                }
            }
            vec![Some(gin)]
        }
        Op::LayerNorm { xhat, rstd, cols } => {
            let cols = *cols;
            let w = parents[1].data();
            let gx = wants(0).then(|| {
                let mut gx = vec![0.0; g.len()];
                for (r, ((gxr, gr), xr)) in gx
                    .chunks_mut(cols)
                    .zip(g.chunks(cols))
                    .zip(xhat.chunks(cols))
                    .enumerate()
                {
                    let gw: Vec<f64> = gr.iter().zip(w).map(|(a, b)| a * b).collect();
                    let mean_gw = gw.iter().sum::<f64>() / cols as f64;
                    let mean_gwx = gw.iter().zip(xr).map(|(a, b)| a * b).sum::<f64>() / cols as f64;
                    for ((o, &gwv), &xv) in gxr.iter_mut().zip(&gw).zip(xr) {
                        *o = rstd[r] * (gwv - mean_gw - xv * mean_gwx);
                    }
                }
                gx
            });
            let gw = wants(1).then(|| {
                let mut gw = vec![0.0; cols];
                for (gr, xr) in g.chunks(cols).zip(xhat.chunks(cols)) {
                    for ((o, &gv), &xv) in gw.iter_mut().zip(gr).zip(xr) {
                        *o += gv * xv;
                    }
                }
                gw
            });
            let gb = wants(2).then(|| {
                let mut gb = vec![0.0; cols];
                for gr in g.chunks(cols) {
                    for (o, &gv) in gb.iter_mut().zip(gr) {
                        *o += gv;
                    }
                }
                gb
            });
            vec![gx, gw, gb]
        }
        Op::Gelu => vec![Some(
            g.iter()
                .zip(parents[0].data())
                .map(|(gv, &x)| gv * gelu_derivative(x))
                .collect(),
        )],
        Op::Conv2d(geom) => vec![
            wants(0).then(|| kernels::conv2d_backward_input(g, parents[1].data(), geom)),
            wants(1).then(|| kernels::conv2d_backward_weight(g, parents[0].data(), geom)),
        ],
        Op::NarrowLast { start, cols } => {
            let len = *out.shape.last().expect("narrow output has an axis");
            let mut gin = vec![0.0; parents[0].numel()];
            for (row, gr) in gin.chunks_mut(*cols).zip(g.chunks(len)) {
                row[*start..start + len].copy_from_slice(gr);
            }
            vec![Some(gin)]
        }
        Op::ConcatLast { widths } => {
            let total: usize = widths.iter().sum();
            let mut offset = 0;
            widths
                .iter()
                .enumerate()
                .map(|(i, &w)| {
                    let part = wants(i).then(|| {
                        g.chunks(total)
                            .flat_map(|row| row[offset..offset + w].iter().copied())
                            .collect()
                    });
                    offset += w;
                    part
                })
                .collect()
        }
        Op::CrossEntropy { probs, label } => {
            let mut gin: Vec<f64> = probs.iter().map(|p| g[0] * p).collect();
            gin[*label] -= g[0];
            vec![Some(gin)]
        }
    }
}

fn key(t: &Tensor) -> *const Inner {
    std::sync::Arc::as_ptr(&t.0)
}

/// Topologically ordered record of the operations reachable from a scalar loss.
///
/// Operands appear before the operations that consume them; replaying the
/// record in reverse propagates adjoints from the loss to every tracked leaf.
pub struct GradTape {
    order: Vec<Tensor>,
}

impl GradTape {
    pub fn record(loss: &Tensor) -> Result<GradTape> {
        if loss.numel() != 1 {
            return Err(Error::Usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                loss.shape()
            )));
        }
        if !loss.requires_grad() {
            return Err(Error::Usage(
                "loss is detached: no tracked tensor reaches it".into(),
            ));
        }
        let mut order = Vec::new();
        let mut visited = HashSet::new();
        let mut stack = vec![(loss.clone(), false)];
        while let Some((t, expanded)) = stack.pop() {
            if expanded {
                order.push(t);
                continue;
            }
            if !visited.insert(key(&t)) {
                continue;
            }
            stack.push((t.clone(), true));
            if let Some(node) = &t.0.node {
                for p in &node.parents {
                    if p.requires_grad() && !visited.contains(&key(p)) {
                        stack.push((p.clone(), false));
                    }
                }
            }
        }
        Ok(GradTape { order })
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    /// Tracked leaves reachable from the loss.
    pub fn leaves(&self) -> impl Iterator<Item = &Tensor> {
        self.order.iter().filter(|t| t.is_leaf())
    }

    /// Propagates adjoints from the loss (the last entry) back to the leaves.
    pub fn replay(&self) {
        let Some(loss) = self.order.last() else { return };
        let mut grads: HashMap<*const Inner, Vec<f64>> = HashMap::new();
        grads.insert(key(loss), vec![1.0]);
        for t in self.order.iter().rev() {
            let Some(g) = grads.remove(&key(t)) else { continue };
            match &t.0.node {
                Some(node) => {
                    let parent_grads = adjoints(&node.op, &node.parents, &t.0, &g);
                    for (p, pg) in node.parents.iter().zip(parent_grads) {
                        let Some(pg) = pg else { continue };
                        if !p.requires_grad() {
                            continue;
                        }
                        match grads.get_mut(&key(p)) {
                            Some(acc) => acc.iter_mut().zip(&pg).for_each(|(a, b)| *a += b),
                            None => {
                                grads.insert(key(p), pg);
                            }
                        }
                    }
                }
                None => {
                    let mut slot = t.0.grad.lock().expect("grad lock poisoned");
                    match slot.as_mut() {
                        Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                        None => *slot = Some(g),
                    }
                }
            }
        }
    }
}

impl Tensor {
    /// Populates the gradient of every tracked leaf that reaches this scalar.
    ///
    /// Leaf gradients accumulate across calls with different losses. Running
    /// backward twice on the same loss is rejected until
    /// [`Tensor::reset_backward`] is called.
    pub fn backward(&self) -> Result<()> {
        let tape = GradTape::record(self)?;
        if self.0.consumed.swap(true, Ordering::SeqCst) {
            return Err(Error::Usage(
                "backward already ran for this loss; call reset_backward first".into(),
            ));
        }
        tape.replay();
        Ok(())
    }

    /// Allows another backward pass from this loss.
    pub fn reset_backward(&self) {
        self.0.consumed.store(false, Ordering::SeqCst);
    }
}
