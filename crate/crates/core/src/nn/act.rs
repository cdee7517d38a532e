use rand::Rng;

use crate::real::Real;

pub fn leaky_relu<T: Real>(x: &mut [T], slope: T) {
    for v in x.iter_mut() {
        if *v < T::zero() {
            *v *= slope;
        }
    }
}

/// `pre` is the activation input; gradient is scaled in place.
pub fn leaky_relu_backward<T: Real>(pre: &[T], grad: &mut [T], slope: T) {
    for (g, &p) in grad.iter_mut().zip(pre) {
        if p < T::zero() {
            *g *= slope;
        }
    }
}

pub fn relu<T: Real>(x: &mut [T]) {
    for v in x.iter_mut() {
        if *v < T::zero() {
            *v = T::zero();
        }
    }
}

pub fn relu_backward<T: Real>(pre: &[T], grad: &mut [T]) {
    for (g, &p) in grad.iter_mut().zip(pre) {
        if p <= T::zero() {
            *g = T::zero();
        }
    }
}

pub fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Inverted dropout mask: kept entries scale by `1 / (1 - rate)`.
pub fn dropout_mask<T: Real, R: Rng>(len: usize, rate: f64, rng: &mut R) -> Vec<T> {
    let keep = T::from_f64_lossy(1.0 / (1.0 - rate));
    (0..len)
        .map(|_| if rng.gen::<f64>() < rate { T::zero() } else { keep })
        .collect()
}

pub fn dropout_backward<T: Real>(mask: &[T], grad: &mut [T]) {
    for (g, &m) in grad.iter_mut().zip(mask) {
        *g *= m;
    }
}
