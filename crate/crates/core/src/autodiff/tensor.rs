//! Dense n-dimensional tensors, the carrier for parameters and data.

use super::scalar::Scalar;
use crate::error::{Error, Result};

/// Row-major dense tensor with an optional gradient buffer.
///
/// Invariants: `data.len() == dims.iter().product()`, `dims` is non-empty and
/// every dimension is at least 1, and `grad` (when present) matches `data` in
/// length.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T: Scalar = f32> {
    dims: Vec<usize>,
    data: Vec<T>,
    requires_grad: bool,
    grad: Option<Vec<T>>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(dims: Vec<usize>, data: Vec<T>) -> Result<Self> {
        if dims.is_empty() || dims.contains(&0) {
            return Err(Error::shape(format!("invalid tensor dims {dims:?}")));
        }
        let len: usize = dims.iter().product();
        if data.len() != len {
            return Err(Error::shape(format!(
                "data length {} does not match dims {dims:?} (= {len})",
                data.len()
            )));
        }
        Ok(Tensor { dims, data, requires_grad: false, grad: None })
    }

    pub fn zeros(dims: Vec<usize>) -> Self {
        let len = dims.iter().product();
        Tensor::new(dims, vec![T::zero(); len]).expect("zeros: valid dims")
    }

    pub fn full(dims: Vec<usize>, v: T) -> Self {
        let len = dims.iter().product();
        Tensor::new(dims, vec![v; len]).expect("full: valid dims")
    }

    pub fn scalar(v: T) -> Self {
        Tensor::new(vec![1], vec![v]).unwrap()
    }

    pub fn from_f64_slice(dims: Vec<usize>, data: &[f64]) -> Result<Self> {
        Tensor::new(dims, data.iter().map(|&v| T::from_f64_c(v)).collect())
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn rank(&self) -> usize {
        self.dims.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        false // dims are all >= 1 by construction
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    /// Mark as trainable. The gradient buffer appears on first accumulation.
    pub fn set_requires_grad(&mut self, on: bool) -> &mut Self {
        self.requires_grad = on;
        if !on {
            self.grad = None;
        }
        self
    }

    pub fn with_grad(mut self) -> Self {
        self.requires_grad = true;
        self
    }

    pub fn grad(&self) -> Option<&[T]> {
        self.grad.as_deref()
    }

    pub fn zero_grad(&mut self) {
        if let Some(g) = &mut self.grad {
            g.iter_mut().for_each(|v| *v = T::zero());
        }
    }

    pub fn clear_grad(&mut self) {
        self.grad = None;
    }

    /// `grad += delta`, allocating zeros on first use.
    pub fn accumulate_grad(&mut self, delta: &[T]) -> Result<()> {
        if delta.len() != self.data.len() {
            return Err(Error::shape(format!(
                "gradient length {} vs tensor length {}",
                delta.len(),
                self.data.len()
            )));
        }
        let g = self.grad.get_or_insert_with(|| vec![T::zero(); self.data.len()]);
        for (gi, di) in g.iter_mut().zip(delta) {
            *gi = *gi + *di;
        }
        Ok(())
    }

    /// Gradient buffer, or an error naming the parameter when absent.
    pub fn grad_or_err(&self, name: &str) -> Result<&[T]> {
        self.grad
            .as_deref()
            .ok_or_else(|| Error::usage(format!("parameter `{name}` has no gradient")))
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.data.iter().map(|v| v.to_f64_c()).collect()
    }
}
