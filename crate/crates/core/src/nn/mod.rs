//! Minimal CPU tensor layers with hand-written backward passes.
//!
//! Everything operates on NCHW batches stored in a flat [`Tensor`].
//! Layers keep their trainable values and accumulated gradients together in
//! [`Param`]; a layer's `backward` adds into `grad`, callers zero it.

mod act;
mod conv;
mod conv1d;
mod norm;

pub use act::{
    dropout_backward, dropout_mask, leaky_relu, leaky_relu_backward, relu, relu_backward, sigmoid,
};
pub use conv::{Conv2d, ConvGeom, Deconv2d};
pub use conv1d::Conv1d;
pub use norm::{BatchNorm, BnCache, BN_EPSILON, BN_MOMENTUM};

use rand::Rng;

use crate::real::Real;

/// Dense NCHW buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn zeros(n: usize, c: usize, h: usize, w: usize) -> Self {
        Tensor { n, c, h, w, data: vec![T::zero(); n * c * h * w] }
    }

    pub fn from_vec(n: usize, c: usize, h: usize, w: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), n * c * h * w, "tensor data length does not match shape");
        Tensor { n, c, h, w, data }
    }

    pub fn spatial(&self) -> usize {
        self.h * self.w
    }

    pub fn sample_len(&self) -> usize {
        self.c * self.h * self.w
    }

    pub fn sample(&self, i: usize) -> &[T] {
        let len = self.sample_len();
        &self.data[i * len..(i + 1) * len]
    }

    pub fn sample_mut(&mut self, i: usize) -> &mut [T] {
        let len = self.sample_len();
        &mut self.data[i * len..(i + 1) * len]
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        (self.n, self.c, self.h, self.w) == (other.n, other.c, other.h, other.w)
    }

    /// Concatenate along channels; both tensors share n, h and w.
    pub fn concat_channels(a: &Self, b: &Self) -> Self {
        assert!(a.n == b.n && a.h == b.h && a.w == b.w, "concat: mismatched shapes");
        let mut out = Tensor::zeros(a.n, a.c + b.c, a.h, a.w);
        for i in 0..a.n {
            let dst = out.sample_mut(i);
            let split = a.sample_len();
            dst[..split].copy_from_slice(a.sample(i));
            dst[split..].copy_from_slice(b.sample(i));
        }
        out
    }

    /// Inverse of [`Tensor::concat_channels`].
    pub fn split_channels(&self, first: usize) -> (Self, Self) {
        assert!(first <= self.c);
        let mut a = Tensor::zeros(self.n, first, self.h, self.w);
        let mut b = Tensor::zeros(self.n, self.c - first, self.h, self.w);
        let split = first * self.spatial();
        for i in 0..self.n {
            let src = self.sample(i);
            a.sample_mut(i).copy_from_slice(&src[..split]);
            b.sample_mut(i).copy_from_slice(&src[split..]);
        }
        (a, b)
    }

    pub fn add_assign(&mut self, other: &Self) {
        assert!(self.same_shape(other));
        for (x, y) in self.data.iter_mut().zip(&other.data) {
            *x += *y;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// A trainable array with its gradient accumulator.
#[derive(Debug, Clone, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub value: Vec<T>,
    pub grad: Vec<T>,
}

impl<T: Real> Param<T> {
    pub fn zeros(name: impl Into<String>, shape: &[usize]) -> Self {
        let len = shape.iter().product();
        Param {
            name: name.into(),
            shape: shape.to_vec(),
            value: vec![T::zero(); len],
            grad: vec![T::zero(); len],
        }
    }

    pub fn filled(name: impl Into<String>, shape: &[usize], v: T) -> Self {
        let mut p = Self::zeros(name, shape);
        p.value.iter_mut().for_each(|x| *x = v);
        p
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = T::zero());
    }

    /// Uniform Glorot initialization.
    pub fn glorot<R: Rng>(&mut self, fan_in: usize, fan_out: usize, rng: &mut R) {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        for v in self.value.iter_mut() {
            *v = T::from_f64_lossy(rng.gen_range(-limit..limit));
        }
    }
}

/// Non-trainable state carried in checkpoints (batch-norm running statistics).
#[derive(Debug, Clone, PartialEq)]
pub struct Buffer<T> {
    pub name: String,
    pub value: Vec<T>,
}

/// Uniform read access to a layer tree's parameters and buffers, in a stable
/// order. Checkpoints, optimizers and parameter counts all rely on it.
pub trait Parameterized<T: Real> {
    fn visit_params<'a>(&'a self, f: &mut dyn FnMut(&'a Param<T>));
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>));
    fn visit_buffers<'a>(&'a self, _f: &mut dyn FnMut(&'a Buffer<T>)) {}
    fn visit_buffers_mut(&mut self, _f: &mut dyn FnMut(&mut Buffer<T>)) {}

    fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit_params(&mut |p| n += p.len());
        n
    }

    fn zero_grad(&mut self) {
        self.visit_params_mut(&mut |p| p.zero_grad());
    }
}
