use super::{Buffer, Param, Tensor};
use crate::real::Real;

pub const BN_EPSILON: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.99;

/// Per-channel batch normalization over `n * h * w` positions.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm<T> {
    pub gamma: Param<T>,
    pub beta: Param<T>,
    pub running_mean: Buffer<T>,
    pub running_var: Buffer<T>,
    pub channels: usize,
    /// Weight of the old value in the running-statistics average.
    pub momentum: f64,
}

/// Values saved by the forward pass for backward and running-stat updates.
#[derive(Debug, Clone)]
pub struct BnCache<T> {
    pub xhat: Tensor<T>,
    pub inv_std: Vec<T>,
    pub batch_mean: Vec<T>,
    /// Unbiased batch variance, the value folded into the running estimate.
    pub batch_var: Vec<T>,
    pub train: bool,
}

impl<T: Real> BatchNorm<T> {
    pub fn new(name: &str, channels: usize) -> Self {
        BatchNorm {
            gamma: Param::filled(format!("{name}.gamma"), &[channels], T::one()),
            beta: Param::zeros(format!("{name}.beta"), &[channels]),
            running_mean: Buffer { name: format!("{name}.running_mean"), value: vec![T::zero(); channels] },
            running_var: Buffer { name: format!("{name}.running_var"), value: vec![T::one(); channels] },
            channels,
            momentum: BN_MOMENTUM,
        }
    }

    pub fn reset(&mut self) {
        let momentum = self.momentum;
        *self = Self::new(self.gamma.name.trim_end_matches(".gamma"), self.channels);
        self.momentum = momentum;
    }

    pub fn forward(&self, x: &Tensor<T>, train: bool) -> (Tensor<T>, BnCache<T>) {
        assert_eq!(x.c, self.channels, "batch norm channels");
        let eps = T::from_f64_lossy(BN_EPSILON);
        let s = x.spatial();
        let m = x.n * s;
        let mut mean = vec![T::zero(); x.c];
        let mut var = vec![T::zero(); x.c];
        let mut unbiased = vec![T::zero(); x.c];
        if train {
            let mf = T::from_usize(m).unwrap();
            for c in 0..x.c {
                let mut sum = T::zero();
                for i in 0..x.n {
                    sum += x.sample(i)[c * s..(c + 1) * s].iter().copied().sum::<T>();
                }
                let mu = sum / mf;
                let mut sq = T::zero();
                for i in 0..x.n {
                    for &v in &x.sample(i)[c * s..(c + 1) * s] {
                        sq += (v - mu) * (v - mu);
                    }
                }
                mean[c] = mu;
                var[c] = sq / mf;
                unbiased[c] = if m > 1 { sq / T::from_usize(m - 1).unwrap() } else { var[c] };
            }
        } else {
            mean.copy_from_slice(&self.running_mean.value);
            var.copy_from_slice(&self.running_var.value);
        }
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let mut xhat = Tensor::zeros(x.n, x.c, x.h, x.w);
        let mut y = Tensor::zeros(x.n, x.c, x.h, x.w);
        for i in 0..x.n {
            let xs = x.sample(i);
            let hs = xhat.sample_mut(i);
            for c in 0..x.c {
                for j in c * s..(c + 1) * s {
                    hs[j] = (xs[j] - mean[c]) * inv_std[c];
                }
            }
            let ys = y.sample_mut(i);
            let hs = xhat.sample(i);
            for c in 0..x.c {
                let (g, b) = (self.gamma.value[c], self.beta.value[c]);
                for j in c * s..(c + 1) * s {
                    ys[j] = g * hs[j] + b;
                }
            }
        }
        let cache = BnCache { xhat, inv_std, batch_mean: mean, batch_var: unbiased, train };
        (y, cache)
    }

    pub fn backward(&mut self, cache: &BnCache<T>, dy: &Tensor<T>) -> Tensor<T> {
        let xhat = &cache.xhat;
        let s = xhat.spatial();
        let m = T::from_usize(xhat.n * s).unwrap();
        let mut dx = Tensor::zeros(xhat.n, xhat.c, xhat.h, xhat.w);
        for c in 0..xhat.c {
            let mut sum_dy = T::zero();
            let mut sum_dy_xhat = T::zero();
            for i in 0..xhat.n {
                let d = &dy.sample(i)[c * s..(c + 1) * s];
                let h = &xhat.sample(i)[c * s..(c + 1) * s];
                for (&a, &b) in d.iter().zip(h) {
                    sum_dy += a;
                    sum_dy_xhat += a * b;
                }
            }
            self.gamma.grad[c] += sum_dy_xhat;
            self.beta.grad[c] += sum_dy;
            let g = self.gamma.value[c] * cache.inv_std[c];
            for i in 0..xhat.n {
                let d = &dy.sample(i)[c * s..(c + 1) * s];
                let h = &xhat.sample(i)[c * s..(c + 1) * s];
                let out = &mut dx.sample_mut(i)[c * s..(c + 1) * s];
                if cache.train {
                    for j in 0..s {
                        out[j] = g * (d[j] - (sum_dy + h[j] * sum_dy_xhat) / m);
                    }
                } else {
                    for j in 0..s {
                        out[j] = g * d[j];
                    }
                }
            }
        }
        dx
    }

    /// Exponential moving average with weight `momentum` on the old value.
    pub fn update_running(&mut self, cache: &BnCache<T>) {
        if !cache.train {
            return;
        }
        let mom = T::from_f64_lossy(self.momentum);
        let rest = T::one() - mom;
        for c in 0..self.channels {
            let rm = &mut self.running_mean.value[c];
            *rm = mom * *rm + rest * cache.batch_mean[c];
            let rv = &mut self.running_var.value[c];
            *rv = mom * *rv + rest * cache.batch_var[c];
        }
    }

    pub fn params(&self) -> [&Param<T>; 2] {
        [&self.gamma, &self.beta]
    }

    pub fn params_mut(&mut self) -> [&mut Param<T>; 2] {
        [&mut self.gamma, &mut self.beta]
    }

    pub fn buffers(&self) -> [&Buffer<T>; 2] {
        [&self.running_mean, &self.running_var]
    }

    pub fn buffers_mut(&mut self) -> [&mut Buffer<T>; 2] {
        [&mut self.running_mean, &mut self.running_var]
    }
}
