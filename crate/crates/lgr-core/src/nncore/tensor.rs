//! Dense row-major tensor with an optional gradient buffer.

use crate::{invalid_arg, Result, Scalar};

/// N-dimensional dense tensor, row-major (last axis contiguous).
///
/// A tensor either carries gradients (`requires_grad`, used for
/// parameters and for activations on the backward path) or is a plain
/// value buffer. The gradient buffer always has the same length as the
/// data buffer when present.
#[derive(Clone, Debug)]
pub struct Tensor<S: Scalar> {
    shape: Vec<usize>,
    data: Vec<S>,
    grad: Option<Vec<S>>,
}

impl<S: Scalar> Tensor<S> {
    /// Zero-filled tensor. Zero-sized axes are allowed (empty batches).
    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Tensor { shape: shape.to_vec(), data: vec![S::zero(); n], grad: None }
    }

    /// Constant-filled tensor.
    pub fn filled(shape: &[usize], value: S) -> Self {
        let n = shape.iter().product();
        Tensor { shape: shape.to_vec(), data: vec![value; n], grad: None }
    }

    /// Wraps an existing buffer. The buffer length must match the shape.
    pub fn from_vec(shape: &[usize], data: Vec<S>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if data.len() != n {
            return Err(invalid_arg!(
                "tensor data length {} does not match shape {:?} ({} elements)",
                data.len(),
                shape,
                n
            ));
        }
        Ok(Tensor { shape: shape.to_vec(), data, grad: None })
    }

    /// Zero-filled tensor that tracks gradients (parameter constructor).
    pub fn param(shape: &[usize]) -> Self {
        let mut t = Self::zeros(shape);
        t.enable_grad();
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [S] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<S> {
        self.data
    }

    pub fn requires_grad(&self) -> bool {
        self.grad.is_some()
    }

    /// Allocates the gradient buffer if absent.
    pub fn enable_grad(&mut self) {
        if self.grad.is_none() {
            self.grad = Some(vec![S::zero(); self.data.len()]);
        }
    }

    /// Gradient buffer; panics if gradients were never enabled, which is
    /// an internal wiring bug rather than a runtime condition.
    pub fn grad(&self) -> &[S] {
        self.grad.as_deref().expect("gradient read on a tensor without grad buffer")
    }

    pub fn grad_mut(&mut self) -> &mut [S] {
        self.grad.as_deref_mut().expect("gradient write on a tensor without grad buffer")
    }

    pub fn zero_grad(&mut self) {
        if let Some(g) = &mut self.grad {
            g.iter_mut().for_each(|v| *v = S::zero());
        }
    }

    /// Reinterprets the tensor as `[rows, cols]` where `cols` is the last
    /// axis. Valid for any tensor with at least one axis.
    pub fn as_rows(&self) -> (usize, usize) {
        let cols = *self.shape.last().expect("as_rows on rank-0 tensor");
        let rows = self.data.len().checked_div(cols).unwrap_or(0);
        (rows, cols)
    }

    /// True if every element is finite.
    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Converts element type, rounding when narrowing.
    pub fn cast<T: Scalar>(&self) -> Tensor<T> {
        let data = self.data.iter().map(|v| T::of(v.as_f64())).collect();
        Tensor { shape: self.shape.clone(), data, grad: None }
    }
}
