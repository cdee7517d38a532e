//! Condition generator: embeds `z` and emits FiLM gammas and betas through
//! two parallel linear heads.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::film::{FilmBatch, FilmMode};
use crate::error::{Error, Result};
use crate::nn::{dropout_backward, dropout_mask, relu, relu_backward, BatchNorm, BnCache, Buffer, Conv1d, Param, Parameterized, Tensor};
use crate::real::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Embedding {
    #[serde(alias = "fc")]
    FullyConnected,
    Cnn,
}

impl Embedding {
    pub fn short_name(self) -> &'static str {
        match self {
            Embedding::FullyConnected => "F",
            Embedding::Cnn => "C",
        }
    }
}

impl std::str::FromStr for Embedding {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fc" | "fully_connected" => Ok(Embedding::FullyConnected),
            "cnn" => Ok(Embedding::Cnn),
            other => Err(Error::config(format!("unknown embedding '{other}'"))),
        }
    }
}

/// Only linear heads are supported; bounded activations hurt conditioning.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeadActivation {
    #[default]
    Linear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub embedding: Embedding,
    pub film_mode: FilmMode,
    pub n_tasks: usize,
    /// Dense widths (fully connected) or filter counts (CNN), three entries.
    pub hidden_sizes: Vec<usize>,
    #[serde(default = "default_dropout")]
    pub dropout: f64,
    #[serde(default)]
    pub activation_head: HeadActivation,
}

fn default_dropout() -> f64 {
    0.5
}

impl GeneratorConfig {
    pub fn new(embedding: Embedding, film_mode: FilmMode, n_tasks: usize) -> Self {
        let hidden_sizes = match (embedding, film_mode) {
            (Embedding::FullyConnected, FilmMode::Simple) => vec![16, 64, 256],
            (Embedding::FullyConnected, FilmMode::Complex) => vec![16, 256, 1024],
            (Embedding::Cnn, FilmMode::Simple) => vec![16, 32, 64],
            (Embedding::Cnn, FilmMode::Complex) => vec![32, 64, 256],
        };
        GeneratorConfig {
            embedding,
            film_mode,
            n_tasks,
            hidden_sizes,
            dropout: default_dropout(),
            activation_head: HeadActivation::Linear,
        }
    }

    /// `SiF`, `CoC`, ...
    pub fn variant_name(&self) -> String {
        format!("{}{}", self.film_mode.short_name(), self.embedding.short_name())
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_tasks == 0 {
            return Err(Error::config("generator needs at least one task"));
        }
        if self.hidden_sizes.len() != 3 || self.hidden_sizes.contains(&0) {
            return Err(Error::config("generator needs three positive hidden sizes"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config("generator dropout must lie in [0, 1)"));
        }
        Ok(())
    }

    fn head_inputs(&self) -> usize {
        // Both embeddings end in a length-1 sequence.
        self.hidden_sizes[2]
    }
}

/// Trainable scalar count, computed from the layer arithmetic alone.
pub fn generator_param_count(config: &GeneratorConfig, channels_per_depth: &[usize]) -> usize {
    let h = &config.hidden_sizes;
    let conv = |cin: usize, cout: usize, k: usize| cin * cout * k + cout;
    let body = match config.embedding {
        Embedding::FullyConnected => {
            conv(config.n_tasks, h[0], 1) + conv(h[0], h[1], 1) + 2 * h[1] + conv(h[1], h[2], 1) + 2 * h[2]
        }
        Embedding::Cnn => {
            let k = config.n_tasks;
            conv(1, h[0], k) + conv(h[0], h[1], k) + 2 * h[1] + conv(h[1], h[2], k) + 2 * h[2]
        }
    };
    let outputs: usize = channels_per_depth.iter().map(|&c| config.film_mode.values_for(c)).sum();
    body + 2 * conv(config.head_inputs(), outputs, 1)
}

#[derive(Debug, Clone, PartialEq)]
struct GenLayer<T> {
    conv: Conv1d<T>,
    norm: Option<BatchNorm<T>>,
    dropout: bool,
}

#[derive(Debug, Clone)]
struct LayerCache<T> {
    input: Tensor<T>,
    mask: Option<Vec<T>>,
    bn: Option<BnCache<T>>,
    pre_act: Tensor<T>,
}

/// Saved activations of one generator forward pass.
#[derive(Debug, Clone)]
pub struct GenCache<T> {
    layers: Vec<LayerCache<T>>,
    flat: Tensor<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Generator<T> {
    config: GeneratorConfig,
    channels_per_depth: Vec<usize>,
    layers: Vec<GenLayer<T>>,
    gamma_head: Conv1d<T>,
    beta_head: Conv1d<T>,
    initialized: bool,
}

impl<T: Real> Generator<T> {
    /// Allocates zeroed weights; [`Generator::init`] must run before use.
    pub fn new(config: GeneratorConfig, channels_per_depth: &[usize]) -> Result<Self> {
        config.validate()?;
        let h = &config.hidden_sizes;
        let layers = match config.embedding {
            Embedding::FullyConnected => vec![
                GenLayer { conv: Conv1d::dense("generator.dense0", config.n_tasks, h[0]), norm: None, dropout: false },
                GenLayer {
                    conv: Conv1d::dense("generator.block1.dense", h[0], h[1]),
                    norm: Some(BatchNorm::new("generator.block1.bn", h[1])),
                    dropout: true,
                },
                GenLayer {
                    conv: Conv1d::dense("generator.block2.dense", h[1], h[2]),
                    norm: Some(BatchNorm::new("generator.block2.bn", h[2])),
                    dropout: true,
                },
            ],
            Embedding::Cnn => {
                let k = config.n_tasks;
                vec![
                    GenLayer { conv: Conv1d::same("generator.conv0", 1, h[0], k), norm: None, dropout: false },
                    GenLayer {
                        conv: Conv1d::same("generator.block1.conv", h[0], h[1], k),
                        norm: Some(BatchNorm::new("generator.block1.bn", h[1])),
                        dropout: true,
                    },
                    GenLayer {
                        conv: Conv1d::valid("generator.block2.conv", h[1], h[2], k),
                        norm: Some(BatchNorm::new("generator.block2.bn", h[2])),
                        dropout: true,
                    },
                ]
            }
        };
        let outputs: usize = channels_per_depth.iter().map(|&c| config.film_mode.values_for(c)).sum();
        let inputs = config.head_inputs();
        Ok(Generator {
            gamma_head: Conv1d::dense("generator.gamma", inputs, outputs),
            beta_head: Conv1d::dense("generator.beta", inputs, outputs),
            channels_per_depth: channels_per_depth.to_vec(),
            config,
            layers,
            initialized: false,
        })
    }

    /// Glorot weights, zero biases, gamma head bias at 1 so training starts
    /// from the identity transform.
    pub fn init<R: Rng>(&mut self, rng: &mut R) {
        for layer in &mut self.layers {
            layer.conv.init(rng);
            if let Some(bn) = layer.norm.as_mut() {
                bn.reset();
            }
        }
        self.gamma_head.init(rng);
        self.beta_head.init(rng);
        self.gamma_head.bias.value.iter_mut().for_each(|b| *b = T::one());
        self.initialized = true;
    }

    pub(crate) fn set_bn_momentum(&mut self, momentum: f64) {
        for bn in self.layers.iter_mut().filter_map(|l| l.norm.as_mut()) {
            bn.momentum = momentum;
        }
    }

    pub(crate) fn mark_initialized(&mut self) {
        self.initialized = true;
    }

    pub fn config(&self) -> &GeneratorConfig {
        &self.config
    }

    pub fn channels_per_depth(&self) -> &[usize] {
        &self.channels_per_depth
    }

    /// Zero head weights so the output is constant regardless of `z`.
    pub fn set_constant_output(&mut self, gamma: T, beta: T) {
        for head in [&mut self.gamma_head, &mut self.beta_head] {
            head.weight.value.iter_mut().for_each(|w| *w = T::zero());
        }
        self.gamma_head.bias.value.iter_mut().for_each(|b| *b = gamma);
        self.beta_head.bias.value.iter_mut().for_each(|b| *b = beta);
    }

    fn input_tensor(&self, z: &[Vec<T>]) -> Result<Tensor<T>> {
        let n_tasks = self.config.n_tasks;
        if let Some(bad) = z.iter().find(|v| v.len() != n_tasks) {
            return Err(Error::shape(format!(
                "condition vector has {} entries, generator expects {n_tasks}",
                bad.len()
            )));
        }
        let data: Vec<T> = z.iter().flatten().copied().collect();
        Ok(match self.config.embedding {
            Embedding::FullyConnected => Tensor::from_vec(z.len(), n_tasks, 1, 1, data),
            Embedding::Cnn => Tensor::from_vec(z.len(), 1, 1, n_tasks, data),
        })
    }

    /// `dropout_seed` is `Some` in training mode; batch norm then uses batch
    /// statistics and dropout masks come from the seed.
    pub fn forward(&self, z: &[Vec<T>], dropout_seed: Option<u64>) -> Result<(FilmBatch<T>, GenCache<T>)> {
        if !self.initialized {
            return Err(Error::State("generator weights are not initialized".into()));
        }
        let train = dropout_seed.is_some();
        let mut rng = ChaCha8Rng::seed_from_u64(dropout_seed.unwrap_or(0));
        let mut x = self.input_tensor(z)?;
        let mut caches = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let mut a = layer.conv.forward(&x);
            let mask = (train && layer.dropout && self.config.dropout > 0.0).then(|| {
                let m = dropout_mask::<T, _>(a.data.len(), self.config.dropout, &mut rng);
                a.data.iter_mut().zip(&m).for_each(|(v, &k)| *v *= k);
                m
            });
            let (pre, bn) = match layer.norm.as_ref() {
                Some(bn) => {
                    let (y, c) = bn.forward(&a, train);
                    (y, Some(c))
                }
                None => (a, None),
            };
            let mut out = pre.clone();
            relu(&mut out.data);
            caches.push(LayerCache { input: x, mask, bn, pre_act: pre });
            x = out;
        }
        let n = x.n;
        let flat = Tensor::from_vec(n, x.c * x.w, 1, 1, x.data);
        let gammas = self.gamma_head.forward(&flat).data;
        let betas = self.beta_head.forward(&flat).data;
        let (offsets, lens) = FilmBatch::<T>::layout(self.config.film_mode, &self.channels_per_depth);
        let film = FilmBatch { mode: self.config.film_mode, n, offsets, lens, gammas, betas };
        Ok((film, GenCache { layers: caches, flat }))
    }

    /// Accumulates parameter gradients from per-sample FiLM gradients.
    pub fn backward(&mut self, cache: &GenCache<T>, dgamma: &[T], dbeta: &[T]) {
        let flat = &cache.flat;
        let width = dgamma.len() / flat.n;
        let dg = Tensor::from_vec(flat.n, width, 1, 1, dgamma.to_vec());
        let db = Tensor::from_vec(flat.n, width, 1, 1, dbeta.to_vec());
        let mut dflat = self.gamma_head.backward(flat, &dg);
        dflat.add_assign(&self.beta_head.backward(flat, &db));
        let last = &cache.layers.last().expect("generator has layers").pre_act;
        let mut dx = Tensor::from_vec(flat.n, last.c, 1, last.w, dflat.data);
        for (layer, lc) in self.layers.iter_mut().zip(&cache.layers).rev() {
            relu_backward(&lc.pre_act.data, &mut dx.data);
            if let (Some(bn), Some(c)) = (layer.norm.as_mut(), lc.bn.as_ref()) {
                dx = bn.backward(c, &dx);
            }
            if let Some(m) = lc.mask.as_ref() {
                dropout_backward(m, &mut dx.data);
            }
            dx = layer.conv.backward(&lc.input, &dx);
        }
    }

    pub fn update_running(&mut self, cache: &GenCache<T>) {
        for (layer, lc) in self.layers.iter_mut().zip(&cache.layers) {
            if let (Some(bn), Some(c)) = (layer.norm.as_mut(), lc.bn.as_ref()) {
                bn.update_running(c);
            }
        }
    }
}

impl<T: Real> Parameterized<T> for Generator<T> {
    fn visit_params<'a>(&'a self, f: &mut dyn FnMut(&'a Param<T>)) {
        for layer in &self.layers {
            layer.conv.params().into_iter().for_each(&mut *f);
            if let Some(bn) = layer.norm.as_ref() {
                bn.params().into_iter().for_each(&mut *f);
            }
        }
        self.gamma_head.params().into_iter().for_each(&mut *f);
        self.beta_head.params().into_iter().for_each(&mut *f);
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        for layer in &mut self.layers {
            layer.conv.params_mut().into_iter().for_each(&mut *f);
            if let Some(bn) = layer.norm.as_mut() {
                bn.params_mut().into_iter().for_each(&mut *f);
            }
        }
        self.gamma_head.params_mut().into_iter().for_each(&mut *f);
        self.beta_head.params_mut().into_iter().for_each(&mut *f);
    }

    fn visit_buffers<'a>(&'a self, f: &mut dyn FnMut(&'a Buffer<T>)) {
        for bn in self.layers.iter().filter_map(|l| l.norm.as_ref()) {
            bn.buffers().into_iter().for_each(&mut *f);
        }
    }

    fn visit_buffers_mut(&mut self, f: &mut dyn FnMut(&mut Buffer<T>)) {
        for bn in self.layers.iter_mut().filter_map(|l| l.norm.as_mut()) {
            bn.buffers_mut().into_iter().for_each(&mut *f);
        }
    }
}
