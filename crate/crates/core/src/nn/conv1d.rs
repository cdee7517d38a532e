use rand::Rng;

use super::{Param, Tensor};
use crate::real::Real;

/// Stride-1 1-D convolution over the `w` axis of an `[n, c, 1, len]` tensor.
/// With `kernel == 1` and `len == 1` this is an ordinary dense layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv1d<T> {
    pub weight: Param<T>,
    pub bias: Param<T>,
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub pad_before: usize,
    pub pad_after: usize,
}

impl<T: Real> Conv1d<T> {
    pub fn dense(name: &str, inputs: usize, outputs: usize) -> Self {
        Self::new(name, inputs, outputs, 1, 0, 0)
    }

    pub fn new(
        name: &str,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        pad_before: usize,
        pad_after: usize,
    ) -> Self {
        Conv1d {
            weight: Param::zeros(format!("{name}.weight"), &[out_ch, in_ch, kernel]),
            bias: Param::zeros(format!("{name}.bias"), &[out_ch]),
            in_ch,
            out_ch,
            kernel,
            pad_before,
            pad_after,
        }
    }

    /// `same` padding as TensorFlow computes it for stride 1.
    pub fn same(name: &str, in_ch: usize, out_ch: usize, kernel: usize) -> Self {
        let total = kernel - 1;
        Self::new(name, in_ch, out_ch, kernel, total / 2, total - total / 2)
    }

    pub fn valid(name: &str, in_ch: usize, out_ch: usize, kernel: usize) -> Self {
        Self::new(name, in_ch, out_ch, kernel, 0, 0)
    }

    pub fn init<R: Rng>(&mut self, rng: &mut R) {
        self.weight.glorot(self.in_ch * self.kernel, self.out_ch * self.kernel, rng);
        self.bias.value.iter_mut().for_each(|b| *b = T::zero());
    }

    pub fn out_len(&self, len: usize) -> usize {
        len + self.pad_before + self.pad_after + 1 - self.kernel
    }

    pub fn forward(&self, x: &Tensor<T>) -> Tensor<T> {
        assert_eq!(x.c, self.in_ch, "conv1d input channels");
        assert_eq!(x.h, 1);
        let len = x.w;
        let out_len = self.out_len(len);
        let k = self.kernel;
        let mut y = Tensor::zeros(x.n, self.out_ch, 1, out_len);
        for i in 0..x.n {
            let xs = x.sample(i);
            let ys = y.sample_mut(i);
            for co in 0..self.out_ch {
                for t in 0..out_len {
                    let mut s = self.bias.value[co];
                    for ci in 0..self.in_ch {
                        let wrow = &self.weight.value[(co * self.in_ch + ci) * k..][..k];
                        for (j, &wv) in wrow.iter().enumerate() {
                            let pos = (t + j) as isize - self.pad_before as isize;
                            if pos >= 0 && (pos as usize) < len {
                                s += wv * xs[ci * len + pos as usize];
                            }
                        }
                    }
                    ys[co * out_len + t] = s;
                }
            }
        }
        y
    }

    pub fn backward(&mut self, x: &Tensor<T>, dy: &Tensor<T>) -> Tensor<T> {
        let len = x.w;
        let out_len = dy.w;
        let k = self.kernel;
        let mut dx = Tensor::zeros(x.n, x.c, 1, len);
        for i in 0..x.n {
            let xs = x.sample(i);
            let dys = dy.sample(i);
            let dxs = dx.sample_mut(i);
            for co in 0..self.out_ch {
                for t in 0..out_len {
                    let g = dys[co * out_len + t];
                    self.bias.grad[co] += g;
                    for ci in 0..self.in_ch {
                        let base = (co * self.in_ch + ci) * k;
                        for j in 0..k {
                            let pos = (t + j) as isize - self.pad_before as isize;
                            if pos >= 0 && (pos as usize) < len {
                                let p = ci * len + pos as usize;
                                self.weight.grad[base + j] += g * xs[p];
                                dxs[p] += g * self.weight.value[base + j];
                            }
                        }
                    }
                }
            }
        }
        dx
    }

    pub fn params(&self) -> [&Param<T>; 2] {
        [&self.weight, &self.bias]
    }

    pub fn params_mut(&mut self) -> [&mut Param<T>; 2] {
        [&mut self.weight, &mut self.bias]
    }
}
