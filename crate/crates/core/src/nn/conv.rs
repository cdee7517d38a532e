use rand::Rng;

use super::{Param, Tensor};
use crate::real::Real;

/// Geometry of a strided convolution between a "large" image and the
/// "small" image it maps to. A transposed convolution uses the same geometry
/// with the roles of input and output swapped.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub large_h: usize,
    pub large_w: usize,
    pub small_h: usize,
    pub small_w: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad_top: usize,
    pub pad_left: usize,
}

impl ConvGeom {
    /// TensorFlow style `same` padding: `small = ceil(large / stride)` and the
    /// odd padding pixel goes to the bottom/right.
    pub fn same(large_h: usize, large_w: usize, kernel: usize, stride: usize) -> Self {
        let small_h = large_h.div_ceil(stride);
        let small_w = large_w.div_ceil(stride);
        let pad = |large: usize, small: usize| {
            ((small - 1) * stride + kernel).saturating_sub(large) / 2
        };
        ConvGeom {
            large_h,
            large_w,
            small_h,
            small_w,
            kernel,
            stride,
            pad_top: pad(large_h, small_h),
            pad_left: pad(large_w, small_w),
        }
    }

    pub fn patch_len(&self) -> usize {
        self.kernel * self.kernel
    }

    pub fn small_len(&self) -> usize {
        self.small_h * self.small_w
    }

    /// Output columns `lo..hi` whose input column for kernel offset `kw`
    /// falls inside the image.
    fn valid_cols(&self, kw: usize) -> (usize, usize) {
        let (s, pad) = (self.stride, self.pad_left);
        // smallest ow with ow * s + kw >= pad
        let lo = if kw >= pad { 0 } else { (pad - kw).div_ceil(s) };
        // largest ow with ow * s + kw - pad < large_w
        let hi = if self.large_w + pad > kw { (self.large_w + pad - kw).div_ceil(s) } else { 0 };
        (lo.min(self.small_w), hi.min(self.small_w).max(lo.min(self.small_w)))
    }

    /// Unfold a `channels x large` image into `(channels * k * k) x small` columns.
    pub fn im2col<T: Real>(&self, img: &[T], channels: usize, cols: &mut [T]) {
        let k = self.kernel;
        let ncols = self.small_len();
        debug_assert_eq!(img.len(), channels * self.large_h * self.large_w);
        debug_assert_eq!(cols.len(), channels * k * k * ncols);
        for c in 0..channels {
            let plane = &img[c * self.large_h * self.large_w..(c + 1) * self.large_h * self.large_w];
            for kh in 0..k {
                for kw in 0..k {
                    let row = (c * k + kh) * k + kw;
                    let dst = &mut cols[row * ncols..(row + 1) * ncols];
                    for oh in 0..self.small_h {
                        let ih = (oh * self.stride + kh) as isize - self.pad_top as isize;
                        let out_row = &mut dst[oh * self.small_w..(oh + 1) * self.small_w];
                        if ih < 0 || ih as usize >= self.large_h {
                            out_row.iter_mut().for_each(|v| *v = T::zero());
                            continue;
                        }
                        let src = &plane[ih as usize * self.large_w..(ih as usize + 1) * self.large_w];
                        let (lo, hi) = self.valid_cols(kw);
                        out_row[..lo].iter_mut().for_each(|v| *v = T::zero());
                        out_row[hi..].iter_mut().for_each(|v| *v = T::zero());
                        let start = lo * self.stride + kw - self.pad_left;
                        for (v, &x) in out_row[lo..hi].iter_mut().zip(src[start..].iter().step_by(self.stride)) {
                            *v = x;
                        }
                    }
                }
            }
        }
    }

    /// Adjoint of [`ConvGeom::im2col`]: scatter-add columns back into an image.
    pub fn col2im<T: Real>(&self, cols: &[T], channels: usize, img: &mut [T]) {
        let k = self.kernel;
        let ncols = self.small_len();
        for c in 0..channels {
            let plane =
                &mut img[c * self.large_h * self.large_w..(c + 1) * self.large_h * self.large_w];
            for kh in 0..k {
                for kw in 0..k {
                    let row = (c * k + kh) * k + kw;
                    let src = &cols[row * ncols..(row + 1) * ncols];
                    for oh in 0..self.small_h {
                        let ih = (oh * self.stride + kh) as isize - self.pad_top as isize;
                        if ih < 0 || ih as usize >= self.large_h {
                            continue;
                        }
                        let dst = &mut plane[ih as usize * self.large_w..(ih as usize + 1) * self.large_w];
                        let src_row = &src[oh * self.small_w..(oh + 1) * self.small_w];
                        let (lo, hi) = self.valid_cols(kw);
                        let start = lo * self.stride + kw - self.pad_left;
                        for (d, &v) in dst[start..].iter_mut().step_by(self.stride).zip(&src_row[lo..hi]) {
                            *d += v;
                        }
                    }
                }
            }
        }
    }
}

/// Strided 2-D convolution with `same` padding. Weight layout
/// `[out, in, k, k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d<T> {
    pub weight: Param<T>,
    pub bias: Param<T>,
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub stride: usize,
}

impl<T: Real> Conv2d<T> {
    pub fn new(name: &str, in_ch: usize, out_ch: usize, kernel: usize, stride: usize) -> Self {
        Conv2d {
            weight: Param::zeros(format!("{name}.weight"), &[out_ch, in_ch, kernel, kernel]),
            bias: Param::zeros(format!("{name}.bias"), &[out_ch]),
            in_ch,
            out_ch,
            kernel,
            stride,
        }
    }

    pub fn init<R: Rng>(&mut self, rng: &mut R) {
        let rf = self.kernel * self.kernel;
        self.weight.glorot(self.in_ch * rf, self.out_ch * rf, rng);
        self.bias.value.iter_mut().for_each(|b| *b = T::zero());
    }

    pub fn geom(&self, h: usize, w: usize) -> ConvGeom {
        ConvGeom::same(h, w, self.kernel, self.stride)
    }

    pub fn forward(&self, x: &Tensor<T>) -> Tensor<T> {
        assert_eq!(x.c, self.in_ch, "conv input channels");
        let g = self.geom(x.h, x.w);
        let kk = self.in_ch * g.patch_len();
        let p = g.small_len();
        let mut out = Tensor::zeros(x.n, self.out_ch, g.small_h, g.small_w);
        let mut cols = vec![T::zero(); kk * p];
        for i in 0..x.n {
            g.im2col(x.sample(i), self.in_ch, &mut cols);
            let y = out.sample_mut(i);
            for (co, row) in y.chunks_mut(p).enumerate() {
                row.iter_mut().for_each(|v| *v = self.bias.value[co]);
            }
            T::gemm(false, false, self.out_ch, p, kk, T::one(), &self.weight.value, &cols, T::one(), y);
        }
        out
    }

    /// Accumulates weight/bias gradients; returns the input gradient when asked.
    pub fn backward(&mut self, x: &Tensor<T>, dy: &Tensor<T>, need_dx: bool) -> Option<Tensor<T>> {
        let g = self.geom(x.h, x.w);
        let kk = self.in_ch * g.patch_len();
        let p = g.small_len();
        let mut cols = vec![T::zero(); kk * p];
        let mut dx = need_dx.then(|| Tensor::zeros(x.n, x.c, x.h, x.w));
        for i in 0..x.n {
            let dys = dy.sample(i);
            g.im2col(x.sample(i), self.in_ch, &mut cols);
            T::gemm(false, true, self.out_ch, kk, p, T::one(), dys, &cols, T::one(), &mut self.weight.grad);
            for (co, row) in dys.chunks(p).enumerate() {
                self.bias.grad[co] += row.iter().copied().sum::<T>();
            }
            if let Some(dx) = dx.as_mut() {
                T::gemm(true, false, kk, p, self.out_ch, T::one(), &self.weight.value, dys, T::zero(), &mut cols);
                g.col2im(&cols, self.in_ch, dx.sample_mut(i));
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

/// Strided transposed convolution; each application multiplies the spatial
/// dims by `stride` exactly. Weight layout `[in, out, k, k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Deconv2d<T> {
    pub weight: Param<T>,
    pub bias: Param<T>,
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub stride: usize,
}

impl<T: Real> Deconv2d<T> {
    pub fn new(name: &str, in_ch: usize, out_ch: usize, kernel: usize, stride: usize) -> Self {
        Deconv2d {
            weight: Param::zeros(format!("{name}.weight"), &[in_ch, out_ch, kernel, kernel]),
            bias: Param::zeros(format!("{name}.bias"), &[out_ch]),
            in_ch,
            out_ch,
            kernel,
            stride,
        }
    }

    pub fn init<R: Rng>(&mut self, rng: &mut R) {
        let rf = self.kernel * self.kernel;
        self.weight.glorot(self.out_ch * rf, self.in_ch * rf, rng);
        self.bias.value.iter_mut().for_each(|b| *b = T::zero());
    }

    pub fn geom(&self, h: usize, w: usize) -> ConvGeom {
        ConvGeom::same(h * self.stride, w * self.stride, self.kernel, self.stride)
    }

    pub fn forward(&self, x: &Tensor<T>) -> Tensor<T> {
        assert_eq!(x.c, self.in_ch, "deconv input channels");
        let g = self.geom(x.h, x.w);
        let kk = self.out_ch * g.patch_len();
        let p = g.small_len();
        let mut out = Tensor::zeros(x.n, self.out_ch, g.large_h, g.large_w);
        let mut cols = vec![T::zero(); kk * p];
        let plane = g.large_h * g.large_w;
        for i in 0..x.n {
            T::gemm(true, false, kk, p, self.in_ch, T::one(), &self.weight.value, x.sample(i), T::zero(), &mut cols);
            let y = out.sample_mut(i);
            g.col2im(&cols, self.out_ch, y);
            for (co, row) in y.chunks_mut(plane).enumerate() {
                let b = self.bias.value[co];
                row.iter_mut().for_each(|v| *v += b);
            }
        }
        out
    }

    pub fn backward(&mut self, x: &Tensor<T>, dy: &Tensor<T>, need_dx: bool) -> Option<Tensor<T>> {
        let g = self.geom(x.h, x.w);
        let kk = self.out_ch * g.patch_len();
        let p = g.small_len();
        let plane = g.large_h * g.large_w;
        let mut cols = vec![T::zero(); kk * p];
        let mut dx = need_dx.then(|| Tensor::zeros(x.n, x.c, x.h, x.w));
        for i in 0..x.n {
            let dys = dy.sample(i);
            for (co, row) in dys.chunks(plane).enumerate() {
                self.bias.grad[co] += row.iter().copied().sum::<T>();
            }
            g.im2col(dys, self.out_ch, &mut cols);
            T::gemm(false, true, self.in_ch, kk, p, T::one(), x.sample(i), &cols, T::one(), &mut self.weight.grad);
            if let Some(dx) = dx.as_mut() {
                T::gemm(false, false, self.in_ch, p, kk, T::one(), &self.weight.value, &cols, T::zero(), dx.sample_mut(i));
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
