//! Dense NCHW tensors and the forward/backward kernels used by the networks.
//!
//! Storage is `f32`, row-major over `(n, c, h, w)`. Every kernel here is
//! single-threaded and iterates in a fixed order, so identical inputs give
//! bitwise-identical outputs.

mod activation;
mod affine;
mod batchnorm;
mod conv;
mod gradcheck;
mod rng;

pub use activation::{activation, activation_backward, Activation, SIGMOID_CLAMP};
pub use affine::{affine, affine_backward, AffineGrads};
pub use batchnorm::{
    batch_norm2d, batch_norm2d_backward, BatchNormCache, BatchNormGrads, BnMode, RunningStats,
    BN_EPS, BN_MOMENTUM,
};
pub use conv::{
    conv2d, conv2d_backward, conv_transpose2d, conv_transpose2d_backward, ConvGrads, ConvParams,
};
pub use gradcheck::{grad_check, Evaluation, GradCheckReport};
pub use rng::Rng;

use serde::{Deserialize, Serialize};
use std::fmt;

use crate::error::{Error, Result};

/// `(n, c, h, w)`.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shape(pub [usize; 4]);

impl Shape {
    pub fn new(n: usize, c: usize, h: usize, w: usize) -> Self {
        Shape([n, c, h, w])
    }

    pub fn n(&self) -> usize {
        self.0[0]
    }
    pub fn c(&self) -> usize {
        self.0[1]
    }
    pub fn h(&self) -> usize {
        self.0[2]
    }
    pub fn w(&self) -> usize {
        self.0[3]
    }

    pub fn numel(&self) -> usize {
        self.0.iter().product()
    }

    /// Elements in one batch item.
    pub fn item_len(&self) -> usize {
        self.c() * self.h() * self.w()
    }

    pub fn plane(&self) -> usize {
        self.h() * self.w()
    }
}

impl fmt::Debug for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let [n, c, h, w] = self.0;
        write!(f, "({n}, {c}, {h}, {w})")
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Shape,
    data: Vec<f32>,
    grad: Option<Vec<f32>>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("has_grad", &self.grad.is_some())
            .finish()
    }
}

impl Tensor {
    pub fn zeros(shape: Shape) -> Self {
        Tensor {
            shape,
            data: vec![0.0; shape.numel()],
            grad: None,
        }
    }

    pub fn full(shape: Shape, value: f32) -> Self {
        Tensor {
            shape,
            data: vec![value; shape.numel()],
            grad: None,
        }
    }

    pub fn from_vec(shape: Shape, data: Vec<f32>) -> Result<Self> {
        if data.len() != shape.numel() {
            return Err(Error::shape(format!(
                "data length {} does not match shape {shape} ({} elements)",
                data.len(),
                shape.numel()
            )));
        }
        Ok(Tensor {
            shape,
            data,
            grad: None,
        })
    }

    /// A length-`len` parameter vector, stored as `(len, 1, 1, 1)`.
    pub fn vector(values: Vec<f32>) -> Self {
        let shape = Shape::new(values.len(), 1, 1, 1);
        Tensor {
            shape,
            data: values,
            grad: None,
        }
    }

    pub fn randn(shape: Shape, std: f32, rng: &mut Rng) -> Self {
        let data = (0..shape.numel()).map(|_| rng.normal(0.0, std)).collect();
        Tensor {
            shape,
            data,
            grad: None,
        }
    }

    pub fn rand_uniform(shape: Shape, lo: f32, hi: f32, rng: &mut Rng) -> Self {
        let data = (0..shape.numel()).map(|_| rng.uniform(lo, hi)).collect();
        Tensor {
            shape,
            data,
            grad: None,
        }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn grad(&self) -> Option<&[f32]> {
        self.grad.as_deref()
    }

    pub fn grad_mut(&mut self) -> Option<&mut [f32]> {
        self.grad.as_deref_mut()
    }

    /// Attaches a zeroed gradient buffer (no-op if one exists).
    pub fn with_grad(mut self) -> Self {
        self.ensure_grad();
        self
    }

    pub fn ensure_grad(&mut self) {
        if self.grad.is_none() {
            self.grad = Some(vec![0.0; self.data.len()]);
        }
    }

    pub fn zero_grad(&mut self) {
        if let Some(g) = self.grad.as_mut() {
            g.fill(0.0);
        }
    }

    /// Adds `delta` into the gradient buffer, creating it if absent.
    pub fn accumulate_grad(&mut self, delta: &[f32]) -> Result<()> {
        if delta.len() != self.data.len() {
            return Err(Error::shape(format!(
                "gradient length {} does not match tensor of shape {}",
                delta.len(),
                self.shape
            )));
        }
        self.ensure_grad();
        let g = self.grad.as_mut().expect("grad allocated above");
        for (gi, di) in g.iter_mut().zip(delta) {
            *gi += di;
        }
        Ok(())
    }

    /// Same data without the gradient buffer.
    pub fn detach(&self) -> Tensor {
        Tensor {
            shape: self.shape,
            data: self.data.clone(),
            grad: None,
        }
    }

    pub fn reshape(mut self, shape: Shape) -> Result<Self> {
        if shape.numel() != self.shape.numel() {
            return Err(Error::shape(format!(
                "cannot reshape {} into {shape}",
                self.shape
            )));
        }
        self.shape = shape;
        Ok(self)
    }

    pub fn item(&self, index: usize) -> &[f32] {
        let len = self.shape.item_len();
        &self.data[index * len..(index + 1) * len]
    }

    /// Concatenates tensors along the batch axis.
    pub fn stack(items: &[&Tensor]) -> Result<Tensor> {
        let first = items
            .first()
            .ok_or_else(|| Error::shape("cannot stack zero tensors"))?;
        let inner = first.shape;
        let mut n = 0;
        let mut data = Vec::with_capacity(inner.numel() * items.len());
        for t in items {
            let s = t.shape;
            if s.c() != inner.c() || s.h() != inner.h() || s.w() != inner.w() {
                return Err(Error::shape(format!(
                    "cannot stack {s} with {inner}: per-item shapes differ"
                )));
            }
            n += s.n();
            data.extend_from_slice(&t.data);
        }
        Tensor::from_vec(Shape::new(n, inner.c(), inner.h(), inner.w()), data)
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Tensor {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
            grad: None,
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Inner product accumulated in `f64`.
    pub fn dot(&self, other: &Tensor) -> Result<f64> {
        if self.shape != other.shape {
            return Err(Error::shape(format!(
                "dot of {} with {}",
                self.shape, other.shape
            )));
        }
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| a as f64 * b as f64)
            .sum())
    }

    pub fn mean(&self) -> f64 {
        if self.data.is_empty() {
            return 0.0;
        }
        self.data.iter().map(|&v| v as f64).sum::<f64>() / self.data.len() as f64
    }
}
