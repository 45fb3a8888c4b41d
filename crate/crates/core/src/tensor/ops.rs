use super::autograd::{is_grad_enabled, Op};
use super::counter::add_macs;
use super::kernels::{self, ConvGeom};
use super::{check_finite, Node, Tensor};
use crate::error::{config_err, dim_err, Error, Result};

fn record(
    data: Vec<f64>,
    shape: Vec<usize>,
    op: Op,
    parents: &[&Tensor],
    name: &'static str,
) -> Result<Tensor> {
    check_finite(&data, name)?;
    let track = is_grad_enabled() && parents.iter().any(|p| p.requires_grad());
    let node = track.then(|| Node {
        op,
        parents: parents.iter().map(|&p| p.clone()).collect(),
    });
    Ok(Tensor::from_parts(data, shape, track, node))
}

type BroadcastMaps = (Vec<usize>, Option<Vec<usize>>, Option<Vec<usize>>);

fn broadcast_maps(a: &Tensor, b: &Tensor, name: &str) -> Result<BroadcastMaps> {
    let Some(shape) = kernels::broadcast_shape(a.shape(), b.shape()) else {
        return dim_err(format!(
            "{name}: shapes {:?} and {:?} do not broadcast",
            a.shape(),
            b.shape()
        ));
    };
    let map = |t: &Tensor| (t.shape() != shape.as_slice()).then(|| kernels::broadcast_index(&shape, t.shape()));
    let (ma, mb) = (map(a), map(b));
    Ok((shape, ma, mb))
}

impl Tensor {
    fn zip_broadcast(
        &self,
        other: &Tensor,
        name: &'static str,
        f: impl Fn(f64, f64) -> f64,
        op: fn(Option<Vec<usize>>, Option<Vec<usize>>) -> Op,
    ) -> Result<Tensor> {
        let (shape, ma, mb) = broadcast_maps(self, other, name)?;
        let numel: usize = shape.iter().product();
        let (a, b) = (self.data(), other.data());
        let data = match (&ma, &mb) {
            (None, None) => a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect(),
            _ => (0..numel)
                .map(|i| {
                    let ia = ma.as_ref().map_or(i, |m| m[i]);
                    let ib = mb.as_ref().map_or(i, |m| m[i]);
                    f(a[ia], b[ib])
                })
                .collect(),
        };
        record(data, shape, op(ma, mb), &[self, other], name)
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_broadcast(other, "add", |x, y| x + y, |map_a, map_b| Op::Add { map_a, map_b })
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_broadcast(other, "sub", |x, y| x - y, |map_a, map_b| Op::Sub { map_a, map_b })
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_broadcast(other, "mul", |x, y| x * y, |map_a, map_b| Op::Mul { map_a, map_b })
    }

    pub fn scale(&self, c: f64) -> Result<Tensor> {
        let data = self.data().iter().map(|v| c * v).collect();
        record(data, self.shape().to_vec(), Op::Scale(c), &[self], "scale")
    }

    pub fn add_scalar(&self, c: f64) -> Result<Tensor> {
        let data = self.data().iter().map(|v| v + c).collect();
        record(data, self.shape().to_vec(), Op::AddScalar, &[self], "add_scalar")
    }

    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        let (sa, sb) = (self.shape(), other.shape());
        if sa.len() < 2 || sb.len() < 2 {
            return dim_err(format!("matmul needs rank >= 2 operands, got {sa:?} and {sb:?}"));
        }
        let (m, k) = (sa[sa.len() - 2], sa[sa.len() - 1]);
        let (k2, n) = (sb[sb.len() - 2], sb[sb.len() - 1]);
        if k != k2 {
            return dim_err(format!("matmul inner dimensions differ: {sa:?} x {sb:?}"));
        }
        let (ba, bb) = (&sa[..sa.len() - 2], &sb[..sb.len() - 2]);
        let Some(batch) = kernels::broadcast_shape(ba, bb) else {
            return dim_err(format!("matmul batch dimensions differ: {sa:?} x {sb:?}"));
        };
        let batch_a = kernels::broadcast_index(&batch, ba);
        let batch_b = kernels::broadcast_index(&batch, bb);
        let mut out = vec![0.0; batch_a.len() * m * n];
        let (a, b) = (self.data(), other.data());
        for (ob, (&ia, &ib)) in batch_a.iter().zip(&batch_b).enumerate() {
            kernels::gemm_nn(
                &a[ia * m * k..(ia + 1) * m * k],
                &b[ib * k * n..(ib + 1) * k * n],
                &mut out[ob * m * n..(ob + 1) * m * n],
                m,
                k,
                n,
            );
        }
        add_macs((batch_a.len() * m * k * n) as u64);
        let mut shape = batch;
        shape.extend([m, n]);
        record(out, shape, Op::MatMul { batch_a, batch_b, m, k, n }, &[self, other], "matmul")
    }

    /// Reorders axes: output axis `i` is input axis `axes[i]`.
    pub fn permute(&self, axes: &[usize]) -> Result<Tensor> {
        let mut seen = vec![false; self.rank()];
        if axes.len() != self.rank() || axes.iter().any(|&a| a >= seen.len() || std::mem::replace(&mut seen[a], true)) {
            return dim_err(format!("permute: {axes:?} is not a permutation of {} axes", self.rank()));
        }
        let (data, shape) = kernels::permute(self.data(), self.shape(), axes);
        record(data, shape, Op::Permute { axes: axes.to_vec() }, &[self], "permute")
    }

    /// Swaps the last two axes.
    pub fn transpose_last2(&self) -> Result<Tensor> {
        let r = self.rank();
        if r < 2 {
            return dim_err(format!("transpose needs rank >= 2, got {:?}", self.shape()));
        }
        let mut axes: Vec<usize> = (0..r).collect();
        axes.swap(r - 2, r - 1);
        self.permute(&axes)
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        if shape.iter().product::<usize>() != self.numel() || shape.contains(&0) {
            return dim_err(format!("cannot reshape {:?} into {shape:?}", self.shape()));
        }
        record(self.to_vec(), shape.to_vec(), Op::Reshape, &[self], "reshape")
    }

    /// Softmax over the last axis, with the row maximum subtracted first.
    pub fn softmax_last(&self) -> Result<Tensor> {
        let Some(&cols) = self.shape().last() else {
            return dim_err("softmax_last needs at least one axis");
        };
        let mut out = self.to_vec();
        for row in out.chunks_mut(cols) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                sum += *v;
            }
            row.iter_mut().for_each(|v| *v /= sum);
        }
        record(out, self.shape().to_vec(), Op::Softmax { cols }, &[self], "softmax_last")
    }

    /// Sum of all elements as a scalar.
    pub fn sum_all(&self) -> Result<Tensor> {
        let s = self.data().iter().sum();
        record(vec![s], vec![], Op::SumAll, &[self], "sum_all")
    }

    pub fn mean_all(&self) -> Result<Tensor> {
        self.sum_all()?.scale(1.0 / self.numel() as f64)
    }

    /// Mean over one axis, which is removed from the shape.
    pub fn mean_axis(&self, axis: usize) -> Result<Tensor> {
        if axis >= self.rank() {
            return dim_err(format!("mean_axis: axis {axis} out of range for {:?}", self.shape()));
        }
        let shape = self.shape();
        let len = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let mut out = Vec::with_capacity(self.numel() / len);
        for blk in self.data().chunks(len * inner) {
            for i in 0..inner {
                out.push((0..len).map(|l| blk[l * inner + i]).sum::<f64>() / len as f64);
            }
        }
        let mut out_shape = shape.to_vec();
        out_shape.remove(axis);
        record(out, out_shape, Op::MeanAxis { axis }, &[self], "mean_axis")
    }

    /// Layer normalization over the last axis with affine `weight`, `bias`.
    pub fn layer_norm(&self, weight: &Tensor, bias: &Tensor, eps: f64) -> Result<Tensor> {
        let Some(&cols) = self.shape().last() else {
            return dim_err("layer_norm needs at least one axis");
        };
        if weight.shape() != [cols] || bias.shape() != [cols] {
            return dim_err(format!(
                "layer_norm over {cols} channels got weight {:?} and bias {:?}",
                weight.shape(),
                bias.shape()
            ));
        }
        let rows = self.numel() / cols;
        let mut xhat = Vec::with_capacity(self.numel());
        let mut rstd = Vec::with_capacity(rows);
        for row in self.data().chunks(cols) {
            let mean = row.iter().sum::<f64>() / cols as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / cols as f64;
            let r = 1.0 / (var + eps).sqrt();
            rstd.push(r);
            xhat.extend(row.iter().map(|v| (v - mean) * r));
        }
        let (w, b) = (weight.data(), bias.data());
        let out = xhat
            .chunks(cols)
            .flat_map(|row| row.iter().zip(w).zip(b).map(|((x, w), b)| x * w + b))
            .collect();
        record(
            out,
            self.shape().to_vec(),
            Op::LayerNorm { xhat, rstd, cols },
            &[self, weight, bias],
            "layer_norm",
        )
    }

    /// Exact (erf-based) GELU.
    pub fn gelu(&self) -> Result<Tensor> {
        let out = self
            .data()
            .iter()
            .map(|&x| 0.5 * x * (1.0 + libm::erf(x / std::f64::consts::SQRT_2)))
            .collect();
        record(out, self.shape().to_vec(), Op::Gelu, &[self], "gelu")
    }

    /// Grouped 2D cross-correlation of `x[C_in, H, W]` with `weight[C_out, C_in/groups, k, k]`,
    /// zero padding `pad` on every side.
    pub fn conv2d(&self, weight: &Tensor, stride: usize, pad: usize, groups: usize) -> Result<Tensor> {
        let (xs, ws) = (self.shape(), weight.shape());
        if xs.len() != 3 || ws.len() != 4 || ws[2] != ws[3] {
            return dim_err(format!("conv2d expects x[C,H,W] and w[O,I,k,k], got {xs:?} and {ws:?}"));
        }
        if stride == 0 || groups == 0 || xs[0] % groups != 0 || ws[0] % groups != 0 {
            return config_err(format!(
                "conv2d: stride {stride} / groups {groups} invalid for {xs:?} -> {ws:?}"
            ));
        }
        if ws[1] != xs[0] / groups {
            return dim_err(format!("conv2d: weight {ws:?} does not match input {xs:?} with {groups} groups"));
        }
        let geom = ConvGeom {
            c_in: xs[0],
            h: xs[1],
            w: xs[2],
            c_out: ws[0],
            k: ws[2],
            stride,
            pad,
            groups,
        };
        if geom.h + 2 * pad < geom.k || geom.w + 2 * pad < geom.k {
            return dim_err(format!("conv2d: kernel {} larger than padded input {xs:?}", geom.k));
        }
        let out = kernels::conv2d_forward(self.data(), weight.data(), &geom);
        add_macs(geom.macs());
        let shape = vec![geom.c_out, geom.h_out(), geom.w_out()];
        record(out, shape, Op::Conv2d(geom), &[self, weight], "conv2d")
    }

    /// Depthwise "same" convolution with `kernel[C, k, k]`, `k` odd.
    pub fn depthwise_conv2d(&self, kernel: &Tensor) -> Result<Tensor> {
        let ks = kernel.shape();
        if ks.len() != 3 || ks[1] != ks[2] {
            return dim_err(format!("depthwise kernel must be [C, k, k], got {ks:?}"));
        }
        let k = ks[1];
        if k.is_multiple_of(2) {
            return config_err(format!("depthwise kernel size {k} must be odd"));
        }
        if self.rank() != 3 || self.shape()[0] != ks[0] {
            return dim_err(format!(
                "depthwise input {:?} does not match kernel {ks:?}",
                self.shape()
            ));
        }
        let c = ks[0];
        self.conv2d(&kernel.reshape(&[c, 1, k, k])?, 1, k / 2, c)
    }

    /// Columns `start..start + len` of the last axis.
    pub fn narrow_last(&self, start: usize, len: usize) -> Result<Tensor> {
        let Some(&cols) = self.shape().last() else {
            return dim_err("narrow_last needs at least one axis");
        };
        if len == 0 || start + len > cols {
            return dim_err(format!("narrow_last: {start}..{} out of 0..{cols}", start + len));
        }
        let out = self
            .data()
            .chunks(cols)
            .flat_map(|row| row[start..start + len].iter().copied())
            .collect();
        let mut shape = self.shape().to_vec();
        *shape.last_mut().expect("rank >= 1") = len;
        record(out, shape, Op::NarrowLast { start, cols }, &[self], "narrow_last")
    }

    /// Concatenation along the last axis; leading shapes must agree.
    pub fn concat_last(parts: &[Tensor]) -> Result<Tensor> {
        let Some(first) = parts.first() else {
            return dim_err("concat_last of zero tensors");
        };
        let lead = &first.shape()[..first.rank().saturating_sub(1)];
        if first.rank() == 0 || parts.iter().any(|p| p.rank() != first.rank() || &p.shape()[..lead.len()] != lead) {
            return dim_err("concat_last: leading shapes differ");
        }
        let widths: Vec<usize> = parts.iter().map(|p| p.shape()[lead.len()]).collect();
        let rows: usize = lead.iter().product();
        let mut out = Vec::with_capacity(rows * widths.iter().sum::<usize>());
        for r in 0..rows {
            for (p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&p.data()[r * w..(r + 1) * w]);
            }
        }
        let mut shape = lead.to_vec();
        shape.push(widths.iter().sum());
        let refs: Vec<&Tensor> = parts.iter().collect();
        record(out, shape, Op::ConcatLast { widths }, &refs, "concat_last")
    }

    /// `-log softmax(self)[label]` for a logit vector.
    pub fn cross_entropy(&self, label: usize) -> Result<Tensor> {
        if self.rank() != 1 {
            return dim_err(format!("cross_entropy expects logits[C], got {:?}", self.shape()));
        }
        if label >= self.numel() {
            return Err(Error::Usage(format!(
                "label {label} out of range for {} classes",
                self.numel()
            )));
        }
        let (top, max) = self
            .data()
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) });
        let exps: Vec<f64> = self.data().iter().map(|v| (v - max).exp()).collect();
        // the top entry contributes exactly 1; ln_1p keeps the rest accurate
        let rest: f64 = exps.iter().enumerate().filter(|&(i, _)| i != top).map(|(_, e)| e).sum();
        let sum = 1.0 + rest;
        let loss = rest.ln_1p() + (max - self.data()[label]);
        let probs = exps.iter().map(|e| e / sum).collect();
        record(vec![loss], vec![], Op::CrossEntropy { probs, label }, &[self], "cross_entropy")
    }
}
