//! Dense row-major `f64` tensors with reverse-mode differentiation.
//!
//! A [`Tensor`] is an immutable value: every operation allocates its result.
//! When an operand was created with gradient tracking (see [`Tensor::param`])
//! the result remembers the operation and its inputs, and
//! [`Tensor::backward`] replays that record in reverse to populate the
//! gradients of every tracked leaf.
//!
//! All stored values are finite. Constructors reject NaN/Inf and every
//! operation checks its output, so a numerical blow-up surfaces as
//! [`Error::NonFinite`] at the operation that produced it.

mod autograd;
pub mod counter;
mod kernels;
mod ops;

use std::fmt;
use std::sync::atomic::AtomicBool;
use std::sync::{Arc, Mutex};

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{dim_err, Error, Result};

pub use autograd::{is_grad_enabled, no_grad, GradTape};
pub(crate) use autograd::Op;

/// Dense n-dimensional array of `f64` with optional gradient tracking.
///
/// Cloning is cheap (reference counted); the underlying values never change.
#[derive(Clone)]
pub struct Tensor(pub(crate) Arc<Inner>);

pub(crate) struct Inner {
    pub(crate) shape: Vec<usize>,
    pub(crate) data: Vec<f64>,
    pub(crate) requires_grad: bool,
    pub(crate) node: Option<Node>,
    pub(crate) grad: Mutex<Option<Vec<f64>>>,
    pub(crate) consumed: AtomicBool,
}

/// Operation that produced a non-leaf tensor.
pub(crate) struct Node {
    pub(crate) op: Op,
    pub(crate) parents: Vec<Tensor>,
}

impl Drop for Inner {
    // Long chains of nodes would otherwise be dropped recursively.
    fn drop(&mut self) {
        let mut stack: Vec<Tensor> = match self.node.take() {
            Some(node) => node.parents,
            None => return,
        };
        while let Some(t) = stack.pop() {
            if let Ok(mut inner) = Arc::try_unwrap(t.0) {
                if let Some(node) = inner.node.take() {
                    stack.extend(node.parents);
                }
            }
        }
    }
}

pub(crate) fn check_finite(data: &[f64], op: &'static str) -> Result<()> {
    if data.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(op))
    }
}

fn check_shape(data_len: usize, shape: &[usize]) -> Result<()> {
    if shape.contains(&0) {
        return dim_err(format!("shape {shape:?} has a zero-length axis"));
    }
    let numel: usize = shape.iter().product();
    if numel != data_len {
        return dim_err(format!(
            "shape {shape:?} holds {numel} values but {data_len} were given"
        ));
    }
    Ok(())
}

impl Tensor {
    pub(crate) fn from_parts(
        data: Vec<f64>,
        shape: Vec<usize>,
        requires_grad: bool,
        node: Option<Node>,
    ) -> Tensor {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor(Arc::new(Inner {
            shape,
            data,
            requires_grad,
            node,
            grad: Mutex::new(None),
            consumed: AtomicBool::new(false),
        }))
    }

    /// Untracked tensor from row-major values.
    pub fn new(data: Vec<f64>, shape: &[usize]) -> Result<Tensor> {
        check_shape(data.len(), shape)?;
        check_finite(&data, "Tensor::new")?;
        Ok(Tensor::from_parts(data, shape.to_vec(), false, None))
    }

    /// Tracked leaf: gradients are accumulated into it by [`Tensor::backward`].
    pub fn param(data: Vec<f64>, shape: &[usize]) -> Result<Tensor> {
        check_shape(data.len(), shape)?;
        check_finite(&data, "Tensor::param")?;
        Ok(Tensor::from_parts(data, shape.to_vec(), true, None))
    }

    /// Builds a leaf without the finiteness check.
    ///
    /// Only meant for simulating corrupted state in tests; every operation
    /// consuming such a tensor still validates its own output.
    #[doc(hidden)]
    pub fn from_raw_unchecked(data: Vec<f64>, shape: &[usize], requires_grad: bool) -> Tensor {
        assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor::from_parts(data, shape.to_vec(), requires_grad, None)
    }

    pub fn scalar(value: f64) -> Result<Tensor> {
        Tensor::new(vec![value], &[])
    }

    pub fn full(shape: &[usize], value: f64) -> Result<Tensor> {
        Tensor::new(vec![value; shape.iter().product()], shape)
    }

    pub fn zeros(shape: &[usize]) -> Tensor {
        Tensor::full(shape, 0.0).expect("zeros: invalid shape")
    }

    pub fn ones(shape: &[usize]) -> Tensor {
        Tensor::full(shape, 1.0).expect("ones: invalid shape")
    }

    pub fn eye(n: usize) -> Tensor {
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            data[i * n + i] = 1.0;
        }
        Tensor::from_parts(data, vec![n, n], false, None)
    }

    /// Matrix from equally long rows.
    pub fn from_rows(rows: &[&[f64]]) -> Result<Tensor> {
        let cols = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != cols) {
            return dim_err("from_rows: ragged rows");
        }
        let data = rows.iter().flat_map(|r| r.iter().copied()).collect();
        Tensor::new(data, &[rows.len(), cols])
    }

    /// Values drawn uniformly from `[lo, hi)`.
    pub fn rand_uniform<R: Rng + ?Sized>(shape: &[usize], lo: f64, hi: f64, rng: &mut R) -> Tensor {
        let n = shape.iter().product();
        let data = (0..n).map(|_| rng.random_range(lo..hi)).collect();
        Tensor::from_parts(data, shape.to_vec(), false, None)
    }

    /// Normal samples with the given standard deviation, redrawn outside ±2σ.
    pub fn trunc_normal<R: Rng + ?Sized>(shape: &[usize], std: f64, rng: &mut R) -> Tensor {
        let n = shape.iter().product();
        let normal = Normal::new(0.0, std).expect("std must be positive and finite");
        let data = (0..n)
            .map(|_| loop {
                let v: f64 = normal.sample(rng);
                if v.abs() <= 2.0 * std {
                    break v;
                }
            })
            .collect();
        Tensor::from_parts(data, shape.to_vec(), false, None)
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.0.data
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.0.data.clone()
    }

    pub fn numel(&self) -> usize {
        self.0.data.len()
    }

    pub fn rank(&self) -> usize {
        self.0.shape.len()
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    pub fn is_leaf(&self) -> bool {
        self.0.node.is_none()
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> Result<f64> {
        match self.0.data.as_slice() {
            [v] => Ok(*v),
            _ => dim_err(format!("item() on tensor of shape {:?}", self.shape())),
        }
    }

    /// Element at a multi-index.
    pub fn at(&self, index: &[usize]) -> f64 {
        assert_eq!(index.len(), self.rank(), "index rank mismatch");
        let mut flat = 0;
        for (&i, &d) in index.iter().zip(self.shape()) {
            assert!(i < d, "index {index:?} out of bounds for {:?}", self.shape());
            flat = flat * d + i;
        }
        self.0.data[flat]
    }

    /// Accumulated gradient of a tracked leaf, if backward has reached it.
    pub fn grad(&self) -> Option<Tensor> {
        let guard = self.0.grad.lock().expect("grad lock poisoned");
        guard
            .as_ref()
            .map(|g| Tensor::from_parts(g.clone(), self.0.shape.clone(), false, None))
    }

    pub fn zero_grad(&self) {
        *self.0.grad.lock().expect("grad lock poisoned") = None;
    }

    /// Same values, no gradient tracking and no history.
    pub fn detach(&self) -> Tensor {
        Tensor::from_parts(self.0.data.clone(), self.0.shape.clone(), false, None)
    }

    /// Same values as a fresh tracked leaf.
    pub fn tracked(&self) -> Tensor {
        Tensor::from_parts(self.0.data.clone(), self.0.shape.clone(), true, None)
    }

    /// Largest absolute elementwise difference; shapes must match.
    pub fn max_abs_diff(&self, other: &Tensor) -> Result<f64> {
        if self.shape() != other.shape() {
            return dim_err(format!(
                "max_abs_diff: shapes {:?} and {:?} differ",
                self.shape(),
                other.shape()
            ));
        }
        Ok(self
            .data()
            .iter()
            .zip(other.data())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        const MAX: usize = 16;
        let data = self.data();
        write!(f, "Tensor(shape={:?}, data=", self.shape())?;
        if data.len() <= MAX {
            write!(f, "{data:?}")?;
        } else {
            write!(f, "{:?}..({} values)", &data[..MAX], data.len())?;
        }
        if self.requires_grad() {
            write!(f, ", requires_grad")?;
        }
        write!(f, ")")
    }
}

/// Batched matrix product `A[.., M, K] × B[.., K, N]`.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    a.matmul(b)
}

/// Softmax along the last axis.
pub fn softmax_last(t: &Tensor) -> Result<Tensor> {
    t.softmax_last()
}

/// Elementwise product with broadcasting.
pub fn hadamard(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    a.mul(b)
}

/// Per-channel "same" cross-correlation of `x[C, H, W]` with `kernel[C, k, k]`.
pub fn depthwise_conv2d(x: &Tensor, kernel: &Tensor) -> Result<Tensor> {
    x.depthwise_conv2d(kernel)
}

/// Reverse pass from a scalar loss; see [`Tensor::backward`].
pub fn backward(loss: &Tensor) -> Result<()> {
    loss.backward()
}

#[cfg(test)]
mod tests;
