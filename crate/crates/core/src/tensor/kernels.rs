// Raw loops behind the tensor operations. Slices are row-major.

use rayon::prelude::*;

// Below this many multiply-adds a kernel stays on the calling thread.
const PAR_THRESHOLD: usize = 1 << 15;

/// `out[m, n] += a[m, k] · b[k, n]`
pub(crate) fn gemm_nn(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    let row = |(i, out_row): (usize, &mut [f64])| {
        let a_row = &a[i * k..(i + 1) * k];
        for (p, &av) in a_row.iter().enumerate() {
            let b_row = &b[p * n..(p + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    };
    if m > 1 && m * k * n >= PAR_THRESHOLD {
        out.par_chunks_mut(n).enumerate().for_each(row);
    } else {
        out.chunks_mut(n).enumerate().for_each(row);
    }
}

/// `out[m, k] += g[m, n] · b[k, n]ᵀ`
pub(crate) fn gemm_nt(g: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    let row = |(i, out_row): (usize, &mut [f64])| {
        let g_row = &g[i * n..(i + 1) * n];
        for (p, o) in out_row.iter_mut().enumerate() {
            let b_row = &b[p * n..(p + 1) * n];
            *o += g_row.iter().zip(b_row).map(|(x, y)| x * y).sum::<f64>();
        }
    };
    if m > 1 && m * k * n >= PAR_THRESHOLD {
        out.par_chunks_mut(k).enumerate().for_each(row);
    } else {
        out.chunks_mut(k).enumerate().for_each(row);
    }
}

/// `out[k, n] += a[m, k]ᵀ · g[m, n]`
pub(crate) fn gemm_tn(a: &[f64], g: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    let row = |(p, out_row): (usize, &mut [f64])| {
        for i in 0..m {
            let av = a[i * k + p];
            let g_row = &g[i * n..(i + 1) * n];
            for (o, &gv) in out_row.iter_mut().zip(g_row) {
                *o += av * gv;
            }
        }
    };
    if k > 1 && m * k * n >= PAR_THRESHOLD {
        out.par_chunks_mut(n).enumerate().for_each(row);
    } else {
        out.chunks_mut(n).enumerate().for_each(row);
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub groups: usize,
}

impl ConvGeom {
    pub fn h_out(&self) -> usize {
        (self.h + 2 * self.pad - self.k) / self.stride + 1
    }

    pub fn w_out(&self) -> usize {
        (self.w + 2 * self.pad - self.k) / self.stride + 1
    }

    pub fn cin_per_group(&self) -> usize {
        self.c_in / self.groups
    }

    pub fn cout_per_group(&self) -> usize {
        self.c_out / self.groups
    }

    pub fn macs(&self) -> u64 {
        (self.c_out * self.h_out() * self.w_out() * self.cin_per_group() * self.k * self.k) as u64
    }

    // Input coordinate touched by output coordinate `o` and kernel tap `t`.
    #[inline]
    fn src(&self, o: usize, t: usize, len: usize) -> Option<usize> {
        let pos = (o * self.stride + t) as isize - self.pad as isize;
        (pos >= 0 && (pos as usize) < len).then_some(pos as usize)
    }
}

/// Grouped 2D cross-correlation; `x[c_in, h, w]`, `wt[c_out, c_in/groups, k, k]`.
pub(crate) fn conv2d_forward(x: &[f64], wt: &[f64], g: &ConvGeom) -> Vec<f64> {
    let (ho, wo) = (g.h_out(), g.w_out());
    let (cin_g, cout_g, k) = (g.cin_per_group(), g.cout_per_group(), g.k);
    let mut out = vec![0.0; g.c_out * ho * wo];
    let per_channel = |(co, plane): (usize, &mut [f64])| {
        let group = co / cout_g;
        for cl in 0..cin_g {
            let ci = group * cin_g + cl;
            let x_plane = &x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
            for ky in 0..k {
                for kx in 0..k {
                    let wv = wt[((co * cin_g + cl) * k + ky) * k + kx];
                    for oy in 0..ho {
                        let Some(iy) = g.src(oy, ky, g.h) else { continue };
                        for ox in 0..wo {
                            if let Some(ix) = g.src(ox, kx, g.w) {
                                plane[oy * wo + ox] += wv * x_plane[iy * g.w + ix];
                            }
                        }
                    }
                }
            }
        }
    };
    if g.macs() as usize >= PAR_THRESHOLD {
        out.par_chunks_mut(ho * wo).enumerate().for_each(per_channel);
    } else {
        out.chunks_mut(ho * wo).enumerate().for_each(per_channel);
    }
    out
}

/// Gradient of the convolution with respect to its input.
pub(crate) fn conv2d_backward_input(gout: &[f64], wt: &[f64], g: &ConvGeom) -> Vec<f64> {
    let (ho, wo) = (g.h_out(), g.w_out());
    let (cin_g, cout_g, k) = (g.cin_per_group(), g.cout_per_group(), g.k);
    let mut dx = vec![0.0; g.c_in * g.h * g.w];
    let per_channel = |(ci, plane): (usize, &mut [f64])| {
        let group = ci / cin_g;
        let cl = ci % cin_g;
        for co in group * cout_g..(group + 1) * cout_g {
            let g_plane = &gout[co * ho * wo..(co + 1) * ho * wo];
            for ky in 0..k {
                for kx in 0..k {
                    let wv = wt[((co * cin_g + cl) * k + ky) * k + kx];
                    for oy in 0..ho {
                        let Some(iy) = g.src(oy, ky, g.h) else { continue };
                        for ox in 0..wo {
                            if let Some(ix) = g.src(ox, kx, g.w) {
                                plane[iy * g.w + ix] += wv * g_plane[oy * wo + ox];
                            }
                        }
                    }
                }
            }
        }
    };
    if g.macs() as usize >= PAR_THRESHOLD {
        dx.par_chunks_mut(g.h * g.w).enumerate().for_each(per_channel);
    } else {
        dx.chunks_mut(g.h * g.w).enumerate().for_each(per_channel);
    }
    dx
}

/// Gradient of the convolution with respect to its weights.
pub(crate) fn conv2d_backward_weight(gout: &[f64], x: &[f64], g: &ConvGeom) -> Vec<f64> {
    let (ho, wo) = (g.h_out(), g.w_out());
    let (cin_g, cout_g, k) = (g.cin_per_group(), g.cout_per_group(), g.k);
    let mut dw = vec![0.0; g.c_out * cin_g * k * k];
    let per_filter = |(co, filt): (usize, &mut [f64])| {
        let group = co / cout_g;
        let g_plane = &gout[co * ho * wo..(co + 1) * ho * wo];
        for cl in 0..cin_g {
            let ci = group * cin_g + cl;
            let x_plane = &x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
            for ky in 0..k {
                for kx in 0..k {
                    let mut acc = 0.0;
                    for oy in 0..ho {
                        let Some(iy) = g.src(oy, ky, g.h) else { continue };
                        for ox in 0..wo {
                            if let Some(ix) = g.src(ox, kx, g.w) {
                                acc += g_plane[oy * wo + ox] * x_plane[iy * g.w + ix];
                            }
                        }
                    }
                    filt[(cl * k + ky) * k + kx] += acc;
                }
            }
        }
    };
    if g.macs() as usize >= PAR_THRESHOLD {
        dw.par_chunks_mut(cin_g * k * k).enumerate().for_each(per_filter);
    } else {
        dw.chunks_mut(cin_g * k * k).enumerate().for_each(per_filter);
    }
    dw
}

fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// Copies `data` into the layout given by `axes` (output axis `i` is input axis `axes[i]`).
pub(crate) fn permute(data: &[f64], shape: &[usize], axes: &[usize]) -> (Vec<f64>, Vec<usize>) {
    let in_strides = strides(shape);
    let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
    let src_strides: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
    let mut out = Vec::with_capacity(data.len());
    let mut idx = vec![0usize; shape.len()];
    let mut offset = 0usize;
    for _ in 0..data.len() {
        out.push(data[offset]);
        for d in (0..idx.len()).rev() {
            idx[d] += 1;
            offset += src_strides[d];
            if idx[d] < out_shape[d] {
                break;
            }
            offset -= src_strides[d] * out_shape[d];
            idx[d] = 0;
        }
    }
    (out, out_shape)
}

/// Right-aligned broadcast of two shapes; `None` when incompatible.
pub(crate) fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i + a.len() >= rank { a[i + a.len() - rank] } else { 1 };
        let db = if i + b.len() >= rank { b[i + b.len() - rank] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

/// For every flat index of `out_shape`, the flat index of the broadcast source.
pub(crate) fn broadcast_index(out_shape: &[usize], in_shape: &[usize]) -> Vec<usize> {
    let numel: usize = out_shape.iter().product();
    let lead = out_shape.len() - in_shape.len();
    let in_str = strides(in_shape);
    let src_strides: Vec<usize> = (0..out_shape.len())
        .map(|d| {
            if d < lead || in_shape[d - lead] == 1 {
                0
            } else {
                in_str[d - lead]
            }
        })
        .collect();
    let mut map = Vec::with_capacity(numel);
    let mut idx = vec![0usize; out_shape.len()];
    let mut offset = 0usize;
    for _ in 0..numel {
        map.push(offset);
        for d in (0..idx.len()).rev() {
            idx[d] += 1;
            offset += src_strides[d];
            if idx[d] < out_shape[d] {
                break;
            }
            offset -= src_strides[d] * out_shape[d];
            idx[d] = 0;
        }
    }
    map
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn permute_matches_index_formula() {
        let shape = [2, 3, 4];
        let data: Vec<f64> = (0..24).map(f64::from).collect();
        let (out, out_shape) = permute(&data, &shape, &[2, 0, 1]);
        assert_eq!(out_shape, vec![4, 2, 3]);
        for a in 0..4 {
            for b in 0..2 {
                for c in 0..3 {
                    assert_eq!(out[(a * 2 + b) * 3 + c], data[(b * 3 + c) * 4 + a]);
                }
            }
        }
    }

    #[test]
    fn broadcast_rules() {
        assert_eq!(broadcast_shape(&[2, 3, 4], &[3, 4]), Some(vec![2, 3, 4]));
        assert_eq!(broadcast_shape(&[2, 1, 4], &[3, 1]), Some(vec![2, 3, 4]));
        assert_eq!(broadcast_shape(&[], &[5]), Some(vec![5]));
        assert_eq!(broadcast_shape(&[2, 3], &[4]), None);
        assert_eq!(broadcast_index(&[2, 3], &[3]), vec![0, 1, 2, 0, 1, 2]);
        assert_eq!(broadcast_index(&[2, 3], &[2, 1]), vec![0, 0, 0, 1, 1, 1]);
    }
}
