use serde::{Deserialize, Serialize};

use crate::conditioning::{generator_param_count, FilmMode, GeneratorConfig};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossReduction {
    /// Entrywise L1 norm, the training objective.
    #[default]
    Sum,
    Mean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub n_blocks: usize,
    pub base_filters: usize,
    pub kernel: usize,
    pub stride: usize,
    pub leakiness: f64,
    /// Dropout applies to this many leading decoder blocks.
    pub dropout_blocks: usize,
    pub dropout_rate: f64,
    pub conditioned: bool,
    pub film_mode: FilmMode,
    pub input_height: usize,
    pub input_width: usize,
    pub loss_reduction: LossReduction,
    /// Running-statistics momentum of every batch-norm layer.
    pub bn_momentum: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            n_blocks: 6,
            base_filters: 16,
            kernel: 5,
            stride: 2,
            leakiness: 0.2,
            dropout_blocks: 3,
            dropout_rate: 0.5,
            conditioned: false,
            film_mode: FilmMode::Complex,
            input_height: 512,
            input_width: 128,
            loss_reduction: LossReduction::Sum,
            bn_momentum: crate::nn::BN_MOMENTUM,
        }
    }
}

impl ModelConfig {
    pub fn dedicated() -> Self {
        Self::default()
    }

    pub fn conditioned(film_mode: FilmMode) -> Self {
        ModelConfig { conditioned: true, film_mode, ..Self::default() }
    }

    /// Encoder output channels per block, doubling from `base_filters`.
    pub fn channels(&self) -> Vec<usize> {
        (0..self.n_blocks).map(|i| self.base_filters << i).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_blocks == 0 || self.base_filters == 0 {
            return Err(Error::config("n_blocks and base_filters must be positive"));
        }
        if self.kernel < self.stride || self.stride < 2 {
            return Err(Error::config("kernel must be at least the stride and stride at least 2"));
        }
        let factor = self
            .stride
            .checked_pow(self.n_blocks as u32)
            .ok_or_else(|| Error::config("stride^n_blocks overflows"))?;
        if self.input_height % factor != 0 || self.input_width % factor != 0 {
            return Err(Error::config(format!(
                "input {}x{} is not divisible by {}^{} = {factor}",
                self.input_height, self.input_width, self.stride, self.n_blocks
            )));
        }
        if !(0.0..1.0).contains(&self.bn_momentum) {
            return Err(Error::config("bn_momentum must lie in [0, 1)"));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::config("dropout_rate must lie in [0, 1)"));
        }
        Ok(())
    }

    pub fn check_generator(&self, gen: Option<&GeneratorConfig>) -> Result<()> {
        match (self.conditioned, gen) {
            (true, None) => Err(Error::config("a conditioned model needs a generator config")),
            (false, Some(_)) => Err(Error::config("a dedicated model takes no generator config")),
            (true, Some(g)) if g.film_mode != self.film_mode => Err(Error::config(format!(
                "generator FiLM mode {:?} differs from model FiLM mode {:?}",
                g.film_mode, self.film_mode
            ))),
            (true, Some(g)) => g.validate(),
            (false, None) => Ok(()),
        }
    }

    /// Trainable scalars of the U-Net alone, from layer arithmetic.
    pub fn core_param_count(&self) -> usize {
        let ch = self.channels();
        let n = self.n_blocks;
        let k2 = self.kernel * self.kernel;
        let conv = |cin: usize, cout: usize| cin * cout * k2 + cout;
        let mut total = 0;
        let mut cin = 1;
        for &c in &ch {
            total += conv(cin, c) + 2 * c;
            cin = c;
        }
        for j in 0..n {
            let input = if j == 0 { ch[n - 1] } else { 2 * ch[n - 1 - j] };
            let out = if j + 1 < n { ch[n - 2 - j] } else { ch[0] };
            total += conv(input, out) + 2 * out;
        }
        total + ch[0] + 1
    }

    pub fn total_param_count(&self, gen: Option<&GeneratorConfig>) -> usize {
        self.core_param_count() + gen.map_or(0, |g| generator_param_count(g, &self.channels()))
    }

    /// Decoder block `j` input channel count (deconv input).
    pub fn decoder_input_channels(&self, j: usize) -> usize {
        let ch = self.channels();
        let n = self.n_blocks;
        if j == 0 {
            ch[n - 1]
        } else {
            2 * ch[n - 1 - j]
        }
    }

    pub fn decoder_output_channels(&self, j: usize) -> usize {
        let ch = self.channels();
        let n = self.n_blocks;
        if j + 1 < n {
            ch[n - 2 - j]
        } else {
            ch[0]
        }
    }
}
