use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Tensor;
use crate::real::Real;

/// `Simple` shares one (gamma, beta) pair across all channels of a depth;
/// `Complex` has an independent pair per channel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FilmMode {
    Simple,
    Complex,
}

impl FilmMode {
    /// Number of gamma (equivalently beta) values a depth with `channels`
    /// feature maps needs.
    pub fn values_for(self, channels: usize) -> usize {
        match self {
            FilmMode::Simple => 1,
            FilmMode::Complex => channels,
        }
    }

    pub fn short_name(self) -> &'static str {
        match self {
            FilmMode::Simple => "Si",
            FilmMode::Complex => "Co",
        }
    }
}

impl std::str::FromStr for FilmMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "simple" => Ok(FilmMode::Simple),
            "complex" => Ok(FilmMode::Complex),
            other => Err(Error::config(format!("unknown FiLM mode '{other}'"))),
        }
    }
}

/// A single `[channels x height x width]` feature map.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub values: Vec<f64>,
}

impl FeatureMap {
    pub fn new(channels: usize, height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != channels * height * width {
            return Err(Error::shape(format!(
                "feature map has {} values, expected {channels}x{height}x{width}",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("feature map contains non-finite values".into()));
        }
        Ok(FeatureMap { channels, height, width, values })
    }
}

/// FiLM parameters for every encoder depth, for one condition vector.
#[derive(Debug, Clone, PartialEq)]
pub struct FilmParamSet {
    pub mode: FilmMode,
    pub gammas: Vec<Vec<f64>>,
    pub betas: Vec<Vec<f64>>,
}

impl FilmParamSet {
    pub fn total_values(&self) -> usize {
        self.gammas.iter().chain(&self.betas).map(Vec::len).sum()
    }
}

/// Batched FiLM parameters: row `i` of `gammas`/`betas` holds the values for
/// sample `i`, laid out depth after depth.
#[derive(Debug, Clone)]
pub struct FilmBatch<T> {
    pub mode: FilmMode,
    pub n: usize,
    pub offsets: Vec<usize>,
    pub lens: Vec<usize>,
    pub gammas: Vec<T>,
    pub betas: Vec<T>,
}

impl<T: Real> FilmBatch<T> {
    pub fn width(&self) -> usize {
        self.lens.iter().sum()
    }

    pub fn layout(mode: FilmMode, channels_per_depth: &[usize]) -> (Vec<usize>, Vec<usize>) {
        let lens: Vec<usize> = channels_per_depth.iter().map(|&c| mode.values_for(c)).collect();
        let offsets = lens
            .iter()
            .scan(0, |acc, &l| {
                let o = *acc;
                *acc += l;
                Some(o)
            })
            .collect();
        (offsets, lens)
    }

    /// Every sample gets the same constant gamma and beta at every depth.
    pub fn constant(mode: FilmMode, channels_per_depth: &[usize], n: usize, gamma: T, beta: T) -> Self {
        let (offsets, lens) = Self::layout(mode, channels_per_depth);
        let width: usize = lens.iter().sum();
        FilmBatch { mode, n, offsets, lens, gammas: vec![gamma; n * width], betas: vec![beta; n * width] }
    }

    /// `(gamma, beta)` slices of sample `i` at `depth`.
    pub fn depth(&self, i: usize, depth: usize) -> (&[T], &[T]) {
        let start = i * self.width() + self.offsets[depth];
        let end = start + self.lens[depth];
        (&self.gammas[start..end], &self.betas[start..end])
    }

    pub fn to_param_sets(&self) -> Vec<FilmParamSet> {
        (0..self.n)
            .map(|i| {
                let (mut gammas, mut betas) = (Vec::new(), Vec::new());
                for d in 0..self.lens.len() {
                    let (g, b) = self.depth(i, d);
                    gammas.push(g.iter().map(|v| v.to_f64_lossy()).collect());
                    betas.push(b.iter().map(|v| v.to_f64_lossy()).collect());
                }
                FilmParamSet { mode: self.mode, gammas, betas }
            })
            .collect()
    }
}

/// Apply `gamma * x + beta` in place to every sample of `x`.
/// `gamma`/`beta` hold `n x len` values, `len` being 1 or `x.c`.
pub fn film_forward<T: Real>(x: &mut Tensor<T>, gammas: &[T], betas: &[T], len: usize) {
    let s = x.spatial();
    let c = x.c;
    for i in 0..x.n {
        let g = &gammas[i * len..(i + 1) * len];
        let b = &betas[i * len..(i + 1) * len];
        let xs = x.sample_mut(i);
        for ch in 0..c {
            let (gv, bv) = if len == 1 { (g[0], b[0]) } else { (g[ch], b[ch]) };
            for v in &mut xs[ch * s..(ch + 1) * s] {
                *v = gv * *v + bv;
            }
        }
    }
}

/// Backward of [`film_forward`]. `x` is the FiLM input; `dy` is overwritten
/// with the input gradient. Returns per-sample `(dgamma, dbeta)`.
pub fn film_backward<T: Real>(
    x: &Tensor<T>,
    dy: &mut Tensor<T>,
    gammas: &[T],
    len: usize,
) -> (Vec<T>, Vec<T>) {
    let s = x.spatial();
    let mut dg = vec![T::zero(); x.n * len];
    let mut db = vec![T::zero(); x.n * len];
    for i in 0..x.n {
        let xs = x.sample(i);
        let ds = dy.sample_mut(i);
        for ch in 0..x.c {
            let slot = i * len + if len == 1 { 0 } else { ch };
            let gv = gammas[slot];
            let (mut sg, mut sb) = (T::zero(), T::zero());
            for j in ch * s..(ch + 1) * s {
                sg += ds[j] * xs[j];
                sb += ds[j];
                ds[j] *= gv;
            }
            dg[slot] += sg;
            db[slot] += sb;
        }
    }
    (dg, db)
}

/// FiLM on a single feature map. Simple mode expects one gamma and one
/// beta; complex mode one per channel.
pub fn film_apply(x: &FeatureMap, gamma: &[f64], beta: &[f64], mode: FilmMode) -> Result<FeatureMap> {
    let want = mode.values_for(x.channels);
    if gamma.len() != want || beta.len() != want {
        return Err(Error::shape(format!(
            "{mode:?} FiLM on {} channels needs {want} gamma/beta values, got {}/{}",
            x.channels,
            gamma.len(),
            beta.len()
        )));
    }
    let mut t = Tensor::from_vec(1, x.channels, x.height, x.width, x.values.clone());
    film_forward(&mut t, gamma, beta, want);
    Ok(FeatureMap { channels: x.channels, height: x.height, width: x.width, values: t.data })
}
