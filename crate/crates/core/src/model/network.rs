use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::{LossReduction, ModelConfig};
use crate::conditioning::{
    film_backward, film_forward, ConditionVector, FilmBatch, GenCache, Generator, GeneratorConfig,
};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::nn::{
    dropout_backward, dropout_mask, leaky_relu, leaky_relu_backward, relu, relu_backward, sigmoid,
    BatchNorm, BnCache, Buffer, Conv2d, Deconv2d, Param, Parameterized, Tensor,
};
use crate::real::Real;

/// `Train` uses batch statistics and draws dropout masks from `seed`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Eval,
    Train { seed: u64 },
}

impl Mode {
    fn is_train(self) -> bool {
        matches!(self, Mode::Train { .. })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaskOutput {
    pub mask: Matrix,
    pub masked_magnitude: Matrix,
}

#[derive(Debug, Clone, PartialEq)]
struct EncoderBlock<T> {
    conv: Conv2d<T>,
    bn: BatchNorm<T>,
}

#[derive(Debug, Clone, PartialEq)]
struct DecoderBlock<T> {
    deconv: Deconv2d<T>,
    bn: BatchNorm<T>,
    dropout: bool,
}

#[derive(Debug, Clone)]
struct EncCache<T> {
    input: Tensor<T>,
    bn: BnCache<T>,
    /// Batch-norm output, the FiLM input.
    normed: Tensor<T>,
    pre_act: Tensor<T>,
}

#[derive(Debug, Clone)]
struct DecCache<T> {
    input: Tensor<T>,
    bn: BnCache<T>,
    pre_act: Tensor<T>,
    dropout: Option<Vec<T>>,
}

/// Everything `backward` needs from a forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache<T> {
    pub input: Tensor<T>,
    pub mask: Tensor<T>,
    pub masked: Tensor<T>,
    enc: Vec<EncCache<T>>,
    dec: Vec<DecCache<T>>,
    head_in: Tensor<T>,
    film: Option<FilmBatch<T>>,
    gen: Option<GenCache<T>>,
}

impl<T> ForwardCache<T> {
    pub fn film(&self) -> Option<&FilmBatch<T>> {
        self.film.as_ref()
    }
}

/// A U-Net, optionally conditioned through a FiLM generator.
#[derive(Debug, Clone, PartialEq)]
pub struct Cunet<T> {
    config: ModelConfig,
    gen_config: Option<GeneratorConfig>,
    encoder: Vec<EncoderBlock<T>>,
    decoder: Vec<DecoderBlock<T>>,
    head: Conv2d<T>,
    generator: Option<Generator<T>>,
}

/// Deterministically initialized model for `seed`. Core weights are drawn
/// before generator weights, so a dedicated and a conditioned model built
/// from the same seed share their U-Net weights.
pub fn build_model<T: Real>(config: &ModelConfig, gen_config: Option<&GeneratorConfig>, seed: u64) -> Result<Cunet<T>> {
    let mut model = Cunet::zeroed(config, gen_config)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for b in &mut model.encoder {
        b.conv.init(&mut rng);
    }
    for b in &mut model.decoder {
        b.deconv.init(&mut rng);
    }
    model.head.init(&mut rng);
    if let Some(g) = model.generator.as_mut() {
        g.init(&mut rng);
    }
    Ok(model)
}

/// Entrywise L1 distance between `estimate` and `target`.
pub fn l1_loss<T: Real>(estimate: &[T], target: &[T], reduction: LossReduction) -> T {
    let sum: T = estimate.iter().zip(target).map(|(&a, &b)| (a - b).abs()).sum();
    match reduction {
        LossReduction::Sum => sum,
        LossReduction::Mean => sum / T::from_usize(estimate.len().max(1)).unwrap(),
    }
}

impl<T: Real> Cunet<T> {
    /// All-zero weights with untouched batch-norm state. Generator forward
    /// fails until weights are filled in by [`build_model`] or a checkpoint.
    pub fn zeroed(config: &ModelConfig, gen_config: Option<&GeneratorConfig>) -> Result<Self> {
        config.validate()?;
        config.check_generator(gen_config)?;
        let ch = config.channels();
        let (k, s) = (config.kernel, config.stride);
        let mut encoder = Vec::with_capacity(config.n_blocks);
        let mut cin = 1;
        for (i, &c) in ch.iter().enumerate() {
            encoder.push(EncoderBlock {
                conv: Conv2d::new(&format!("encoder{i}.conv"), cin, c, k, s),
                bn: BatchNorm::new(&format!("encoder{i}.bn"), c),
            });
            cin = c;
        }
        let mut decoder: Vec<DecoderBlock<T>> = (0..config.n_blocks)
            .map(|j| {
                let out = config.decoder_output_channels(j);
                DecoderBlock {
                    deconv: Deconv2d::new(&format!("decoder{j}.deconv"), config.decoder_input_channels(j), out, k, s),
                    bn: BatchNorm::new(&format!("decoder{j}.bn"), out),
                    dropout: j < config.dropout_blocks,
                }
            })
            .collect();
        let mut generator = gen_config.map(|g| Generator::new(g.clone(), &ch)).transpose()?;
        for bn in encoder.iter_mut().map(|b| &mut b.bn).chain(decoder.iter_mut().map(|b| &mut b.bn)) {
            bn.momentum = config.bn_momentum;
        }
        if let Some(g) = generator.as_mut() {
            g.set_bn_momentum(config.bn_momentum);
        }
        Ok(Cunet {
            config: config.clone(),
            gen_config: gen_config.cloned(),
            encoder,
            decoder,
            head: Conv2d::new("mask.conv", ch[0], 1, 1, 1),
            generator,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn gen_config(&self) -> Option<&GeneratorConfig> {
        self.gen_config.as_ref()
    }

    pub fn is_conditioned(&self) -> bool {
        self.generator.is_some()
    }

    pub fn generator(&self) -> Option<&Generator<T>> {
        self.generator.as_ref()
    }

    pub fn generator_mut(&mut self) -> Option<&mut Generator<T>> {
        self.generator.as_mut()
    }

    pub(crate) fn mark_initialized(&mut self) {
        if let Some(g) = self.generator.as_mut() {
            g.mark_initialized();
        }
    }

    /// Total trainable scalars: U-Net plus generator.
    pub fn count_parameters(&self) -> usize {
        self.param_count()
    }

    /// Trainable scalars of the U-Net alone.
    pub fn core_parameter_count(&self) -> usize {
        let mut n = 0;
        self.visit_core_params(&mut |p| n += p.len());
        n
    }

    fn visit_core_params<'a>(&'a self, f: &mut dyn FnMut(&'a Param<T>)) {
        for b in &self.encoder {
            b.conv.params().into_iter().for_each(&mut *f);
            b.bn.params().into_iter().for_each(&mut *f);
        }
        for b in &self.decoder {
            b.deconv.params().into_iter().for_each(&mut *f);
            b.bn.params().into_iter().for_each(&mut *f);
        }
        self.head.params().into_iter().for_each(&mut *f);
    }

    /// Core weights of `self` copied from `other`, which must share the
    /// U-Net architecture.
    pub fn copy_core_from(&mut self, other: &Cunet<T>) -> Result<()> {
        let mut src: Vec<(&str, &[T])> = Vec::new();
        other.visit_core_params(&mut |p| src.push((&p.name, &p.value)));
        let mut i = 0;
        let mut mismatch = None;
        let copy = |p: &mut Param<T>, i: &mut usize, mismatch: &mut Option<String>| {
            match src.get(*i) {
                Some((name, v)) if *name == p.name && v.len() == p.value.len() => p.value.copy_from_slice(v),
                _ => *mismatch = Some(p.name.clone()),
            }
            *i += 1;
        };
        for b in &mut self.encoder {
            for p in b.conv.params_mut().into_iter().chain(b.bn.params_mut()) {
                copy(p, &mut i, &mut mismatch);
            }
        }
        for b in &mut self.decoder {
            for p in b.deconv.params_mut().into_iter().chain(b.bn.params_mut()) {
                copy(p, &mut i, &mut mismatch);
            }
        }
        for p in self.head.params_mut() {
            copy(p, &mut i, &mut mismatch);
        }
        match mismatch {
            Some(name) => Err(Error::shape(format!("core parameter {name} does not match"))),
            None => Ok(()),
        }
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        let cfg = &self.config;
        if x.c != 1 || x.h != cfg.input_height || x.w != cfg.input_width {
            return Err(Error::shape(format!(
                "model expects [n,1,{},{}] input, got [{},{},{},{}]",
                cfg.input_height, cfg.input_width, x.n, x.c, x.h, x.w
            )));
        }
        if x.data.iter().any(|v| !(*v >= T::zero())) {
            return Err(Error::Domain("input magnitudes must be non-negative and finite".into()));
        }
        Ok(())
    }

    /// Batched forward. `z` holds one condition vector per sample and is
    /// required exactly when the model is conditioned.
    pub fn forward(&self, x: &Tensor<T>, z: Option<&[Vec<T>]>, mode: Mode) -> Result<ForwardCache<T>> {
        let (film, gen) = match (&self.generator, z) {
            (Some(g), Some(z)) => {
                if z.len() != x.n {
                    return Err(Error::shape(format!("{} condition vectors for {} inputs", z.len(), x.n)));
                }
                let seed = match mode {
                    Mode::Train { seed } => Some(seed ^ 0x9e37_79b9_7f4a_7c15),
                    Mode::Eval => None,
                };
                let (film, cache) = g.forward(z, seed)?;
                (Some(film), Some(cache))
            }
            (Some(_), None) => return Err(Error::Input("conditioned model needs a condition vector".into())),
            (None, Some(_)) => return Err(Error::Input("dedicated model takes no condition vector".into())),
            (None, None) => (None, None),
        };
        let mut cache = self.forward_with_film(x, film, mode)?;
        cache.gen = gen;
        Ok(cache)
    }

    /// Forward with explicitly supplied FiLM parameters (or none, giving
    /// the plain U-Net path).
    pub fn forward_with_film(&self, x: &Tensor<T>, film: Option<FilmBatch<T>>, mode: Mode) -> Result<ForwardCache<T>> {
        self.check_input(x)?;
        let train = mode.is_train();
        let slope = T::from_f64_lossy(self.config.leakiness);
        if let Some(f) = film.as_ref() {
            if f.n != x.n || f.lens.len() != self.config.n_blocks {
                return Err(Error::shape("FiLM parameters do not match the batch or depth count"));
            }
        }

        let mut enc = Vec::with_capacity(self.encoder.len());
        let mut h = x.clone();
        for (depth, block) in self.encoder.iter().enumerate() {
            let a = block.conv.forward(&h);
            let (normed, bn) = block.bn.forward(&a, train);
            let mut pre = normed.clone();
            if let Some(f) = film.as_ref() {
                let (g, b) = gather_depth(f, depth);
                film_forward(&mut pre, &g, &b, f.lens[depth]);
            }
            let mut out = pre.clone();
            leaky_relu(&mut out.data, slope);
            enc.push(EncCache { input: h, bn, normed, pre_act: pre });
            h = out;
        }

        let n = self.config.n_blocks;
        let mut rng = ChaCha8Rng::seed_from_u64(match mode {
            Mode::Train { seed } => seed,
            Mode::Eval => 0,
        });
        let mut dec = Vec::with_capacity(n);
        // `h` now holds the deepest encoder output
        let mut skips: Vec<&Tensor<T>> = enc.iter().skip(1).map(|c| &c.input).collect();
        skips.push(&h);
        let mut u = h.clone();
        for (j, block) in self.decoder.iter().enumerate() {
            if j > 0 {
                u = Tensor::concat_channels(&u, skips[n - 1 - j]);
            }
            let a = block.deconv.forward(&u);
            let (pre, bn) = block.bn.forward(&a, train);
            let mut out = pre.clone();
            relu(&mut out.data);
            let dropout = (train && block.dropout && self.config.dropout_rate > 0.0).then(|| {
                let m = dropout_mask::<T, _>(out.data.len(), self.config.dropout_rate, &mut rng);
                out.data.iter_mut().zip(&m).for_each(|(v, &k)| *v *= k);
                m
            });
            dec.push(DecCache { input: u, bn, pre_act: pre, dropout });
            u = out;
        }

        let logits = self.head.forward(&u);
        let lo = T::epsilon();
        let hi = T::one() - T::epsilon();
        let mask_data: Vec<T> = logits.data.iter().map(|&l| sigmoid(l).max(lo).min(hi)).collect();
        let mask = Tensor::from_vec(x.n, 1, x.h, x.w, mask_data);
        let masked_data = mask.data.iter().zip(&x.data).map(|(&m, &v)| m * v).collect();
        let masked = Tensor::from_vec(x.n, 1, x.h, x.w, masked_data);
        Ok(ForwardCache { input: x.clone(), mask, masked, enc, dec, head_in: u, film, gen: None })
    }

    /// Loss of a finished forward pass against `y`.
    pub fn loss_of(&self, cache: &ForwardCache<T>, y: &Tensor<T>) -> Result<T> {
        if !cache.masked.same_shape(y) {
            return Err(Error::shape("target shape differs from model output"));
        }
        Ok(l1_loss(&cache.masked.data, &y.data, self.config.loss_reduction))
    }

    /// Forward + loss.
    pub fn loss(&self, x: &Tensor<T>, y: &Tensor<T>, z: Option<&[Vec<T>]>, mode: Mode) -> Result<T> {
        if !x.same_shape(y) {
            return Err(Error::shape("input and target shapes differ"));
        }
        let cache = self.forward(x, z, mode)?;
        self.loss_of(&cache, y)
    }

    /// Accumulates the gradient of the loss against `y` into every
    /// parameter, generator included. Returns the loss.
    pub fn backward(&mut self, cache: &ForwardCache<T>, y: &Tensor<T>) -> Result<T> {
        let loss = self.loss_of(cache, y)?;
        let scale = match self.config.loss_reduction {
            LossReduction::Sum => T::one(),
            LossReduction::Mean => T::one() / T::from_usize(y.data.len().max(1)).unwrap(),
        };
        // d loss / d logit = sign(m*x - y) * x * m(1-m)
        let x = &cache.input;
        let dlogit_data = cache
            .masked
            .data
            .iter()
            .zip(&y.data)
            .zip(&x.data)
            .zip(&cache.mask.data)
            .map(|(((&est, &tgt), &xv), &m)| {
                let d = est - tgt;
                let sign = if d > T::zero() {
                    T::one()
                } else if d < T::zero() {
                    -T::one()
                } else {
                    T::zero()
                };
                sign * scale * xv * m * (T::one() - m)
            })
            .collect();
        let dlogit = Tensor::from_vec(x.n, 1, x.h, x.w, dlogit_data);
        let mut du = self.head.backward(&cache.head_in, &dlogit, true).expect("dx requested");

        let n = self.config.n_blocks;
        let mut skip_grads: Vec<Option<Tensor<T>>> = vec![None; n];
        for (j, (block, dc)) in self.decoder.iter_mut().zip(&cache.dec).enumerate().rev() {
            if let Some(m) = dc.dropout.as_ref() {
                dropout_backward(m, &mut du.data);
            }
            relu_backward(&dc.pre_act.data, &mut du.data);
            let da = block.bn.backward(&dc.bn, &du);
            let dinput = block.deconv.backward(&dc.input, &da, true).expect("dx requested");
            if j > 0 {
                let prev = self.config.decoder_output_channels(j - 1);
                let (dprev, dskip) = dinput.split_channels(prev);
                accumulate(&mut skip_grads[n - 1 - j], dskip);
                du = dprev;
            } else {
                accumulate(&mut skip_grads[n - 1], dinput);
            }
        }

        let slope = T::from_f64_lossy(self.config.leakiness);
        let (mut dgamma, mut dbeta) = match cache.film.as_ref() {
            Some(f) => (vec![T::zero(); f.n * f.width()], vec![T::zero(); f.n * f.width()]),
            None => (Vec::new(), Vec::new()),
        };
        for depth in (0..n).rev() {
            let ec = &cache.enc[depth];
            let mut dh = skip_grads[depth].take().expect("every encoder output receives gradient");
            leaky_relu_backward(&ec.pre_act.data, &mut dh.data, slope);
            if let Some(f) = cache.film.as_ref() {
                let (g, _) = gather_depth(f, depth);
                let (dg, db) = film_backward(&ec.normed, &mut dh, &g, f.lens[depth]);
                scatter_depth(f, depth, &dg, &mut dgamma);
                scatter_depth(f, depth, &db, &mut dbeta);
            }
            let block = &mut self.encoder[depth];
            let da = block.bn.backward(&ec.bn, &dh);
            if let Some(dx) = block.conv.backward(&ec.input, &da, depth > 0) {
                accumulate(&mut skip_grads[depth - 1], dx);
            }
        }

        if let (Some(g), Some(gc)) = (self.generator.as_mut(), cache.gen.as_ref()) {
            g.backward(gc, &dgamma, &dbeta);
        }
        Ok(loss)
    }

    /// Fold a training pass's batch statistics into the running estimates.
    pub fn update_running(&mut self, cache: &ForwardCache<T>) {
        for (b, c) in self.encoder.iter_mut().zip(&cache.enc) {
            b.bn.update_running(&c.bn);
        }
        for (b, c) in self.decoder.iter_mut().zip(&cache.dec) {
            b.bn.update_running(&c.bn);
        }
        if let (Some(g), Some(gc)) = (self.generator.as_mut(), cache.gen.as_ref()) {
            g.update_running(gc);
        }
    }

    /// Eval-mode forward on a single patch-shaped magnitude matrix.
    pub fn forward_patch(&self, x: &Matrix, z: Option<&ConditionVector>) -> Result<MaskOutput> {
        let t = Tensor::from_vec(1, 1, x.rows, x.cols, x.data.iter().map(|&v| T::from_f64_lossy(v)).collect());
        let zs = z.map(|z| vec![z.weights().iter().map(|&v| T::from_f64_lossy(v)).collect::<Vec<T>>()]);
        let cache = self.forward(&t, zs.as_deref(), Mode::Eval)?;
        let to_matrix = |t: &Tensor<T>| Matrix::from_vec(x.rows, x.cols, t.data.iter().map(|v| v.to_f64_lossy()).collect());
        Ok(MaskOutput { mask: to_matrix(&cache.mask), masked_magnitude: to_matrix(&cache.masked) })
    }
}

fn accumulate<T: Real>(slot: &mut Option<Tensor<T>>, g: Tensor<T>) {
    match slot {
        Some(acc) => acc.add_assign(&g),
        None => *slot = Some(g),
    }
}

/// Contiguous `[n x len]` gamma/beta arrays for one depth.
fn gather_depth<T: Real>(f: &FilmBatch<T>, depth: usize) -> (Vec<T>, Vec<T>) {
    let len = f.lens[depth];
    let mut g = Vec::with_capacity(f.n * len);
    let mut b = Vec::with_capacity(f.n * len);
    for i in 0..f.n {
        let (gs, bs) = f.depth(i, depth);
        g.extend_from_slice(gs);
        b.extend_from_slice(bs);
    }
    (g, b)
}

fn scatter_depth<T: Real>(f: &FilmBatch<T>, depth: usize, vals: &[T], out: &mut [T]) {
    let len = f.lens[depth];
    let width = f.width();
    for i in 0..f.n {
        let dst = &mut out[i * width + f.offsets[depth]..][..len];
        for (d, &v) in dst.iter_mut().zip(&vals[i * len..(i + 1) * len]) {
            *d += v;
        }
    }
}

impl<T: Real> Parameterized<T> for Cunet<T> {
    fn visit_params<'a>(&'a self, f: &mut dyn FnMut(&'a Param<T>)) {
        self.visit_core_params(f);
        if let Some(g) = self.generator.as_ref() {
            g.visit_params(f);
        }
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        for b in &mut self.encoder {
            b.conv.params_mut().into_iter().for_each(&mut *f);
            b.bn.params_mut().into_iter().for_each(&mut *f);
        }
        for b in &mut self.decoder {
            b.deconv.params_mut().into_iter().for_each(&mut *f);
            b.bn.params_mut().into_iter().for_each(&mut *f);
        }
        self.head.params_mut().into_iter().for_each(&mut *f);
        if let Some(g) = self.generator.as_mut() {
            g.visit_params_mut(f);
        }
    }

    fn visit_buffers<'a>(&'a self, f: &mut dyn FnMut(&'a Buffer<T>)) {
        for b in &self.encoder {
            b.bn.buffers().into_iter().for_each(&mut *f);
        }
        for b in &self.decoder {
            b.bn.buffers().into_iter().for_each(&mut *f);
        }
        if let Some(g) = self.generator.as_ref() {
            g.visit_buffers(f);
        }
    }

    fn visit_buffers_mut(&mut self, f: &mut dyn FnMut(&mut Buffer<T>)) {
        for b in &mut self.encoder {
            b.bn.buffers_mut().into_iter().for_each(&mut *f);
        }
        for b in &mut self.decoder {
            b.bn.buffers_mut().into_iter().for_each(&mut *f);
        }
        if let Some(g) = self.generator.as_mut() {
            g.visit_buffers_mut(f);
        }
    }
}
