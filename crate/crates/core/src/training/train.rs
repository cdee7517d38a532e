use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::checkpoint::{Checkpoint, ModelSpec};
use super::dataset::{Dataset, Track};
use super::optim::{Adam, EarlyStopping};
use super::sampler::{instance_at, progressive_weight, round_robin_task, sample_instance, Instance};
use super::split_dataset;
use crate::error::{Error, Result};
use crate::model::{build_model, Cunet, Mode};
use crate::nn::{Parameterized, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    /// Sampled training instances per epoch.
    pub instances_per_epoch: usize,
    pub progressive: bool,
    pub progressive_period: u64,
    /// Validation tracks held out of the training partition; by default 5%
    /// of it, at least one.
    pub n_val: Option<usize>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            batch_size: 8,
            max_epochs: 50,
            patience: 5,
            instances_per_epoch: 256,
            progressive: true,
            progressive_period: 5,
            n_val: None,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::config("learning_rate must be positive"));
        }
        if self.patience == 0 {
            return Err(Error::config("patience must be at least 1"));
        }
        if self.batch_size == 0 || self.instances_per_epoch == 0 || self.max_epochs == 0 {
            return Err(Error::config("batch_size, instances_per_epoch and max_epochs must be positive"));
        }
        Ok(())
    }

    pub fn validation_count(&self, n_train: usize) -> usize {
        self.n_val.unwrap_or_else(|| ((n_train as f64 * 0.05).round() as usize).max(1).min(n_train.saturating_sub(1)))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean loss per training instance.
    pub train_loss: f64,
    /// Mean loss per validation instance; NaN without validation data.
    pub val_loss: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Lowest validation loss seen (the last epoch when there is no
    /// validation data).
    pub checkpoint: Checkpoint,
    pub history: Vec<EpochRecord>,
    pub stopped_early: bool,
    /// Progressive weights drawn, in order.
    pub progressive_weights: Vec<f64>,
}

/// Load the dataset's training partition, split off validation tracks and
/// train.
pub fn train(spec: &ModelSpec, cfg: &TrainConfig, dataset: &Dataset) -> Result<TrainOutcome> {
    let train_ids = dataset.manifest.ids(super::Partition::Train);
    let test_ids = dataset.manifest.ids(super::Partition::Test);
    let split = split_dataset(&train_ids, &test_ids, cfg.validation_count(train_ids.len()), cfg.seed)?;
    let train_tracks = dataset.load_all(&split.train_tracks)?;
    let val_tracks = dataset.load_all(&split.val_tracks)?;
    train_on_tracks(spec, cfg, &train_tracks, &val_tracks)
}

fn batch_tensors(instances: &[Instance], conditioned: bool) -> (Tensor<f32>, Tensor<f32>, Option<Vec<Vec<f32>>>) {
    let (h, w) = instances[0].x.values.shape();
    let n = instances.len();
    let mut x = Vec::with_capacity(n * h * w);
    let mut y = Vec::with_capacity(n * h * w);
    for inst in instances {
        x.extend(inst.x.values.data.iter().map(|&v| v as f32));
        y.extend(inst.y.values.data.iter().map(|&v| v as f32));
    }
    let z = conditioned.then(|| instances.iter().map(|i| i.z.weights().iter().map(|&v| v as f32).collect()).collect());
    (Tensor::from_vec(n, 1, h, w, x), Tensor::from_vec(n, 1, h, w, y), z)
}

/// Non-overlapping patches of every validation track for each task.
fn validation_set(tracks: &[Track], tasks: &[usize], width: usize) -> Result<Vec<Instance>> {
    let mut out = Vec::new();
    for track in tracks {
        for &task in tasks {
            let mut offset = 0;
            loop {
                out.push(instance_at(track, task, offset, width)?);
                offset += width;
                if offset >= track.frames() {
                    break;
                }
            }
        }
    }
    Ok(out)
}

fn validation_loss(model: &Cunet<f32>, set: &[Instance], batch: usize) -> Result<f64> {
    let mut total = 0.0;
    for chunk in set.chunks(batch) {
        let (x, y, z) = batch_tensors(chunk, model.is_conditioned());
        total += model.loss(&x, &y, z.as_deref(), Mode::Eval)? as f64;
    }
    Ok(total / set.len() as f64)
}

pub fn train_on_tracks(spec: &ModelSpec, cfg: &TrainConfig, train_tracks: &[Track], val_tracks: &[Track]) -> Result<TrainOutcome> {
    spec.validate()?;
    cfg.validate()?;
    let n_tasks = spec.tasks.len();
    if let Some(t) = train_tracks.iter().chain(val_tracks).find(|t| t.stem_mags.len() != n_tasks) {
        return Err(Error::Data(format!("track `{}` has {} stems, expected {n_tasks}", t.id, t.stem_mags.len())));
    }
    let conditioned = spec.model.conditioned;
    let tasks: Vec<usize> = match &spec.dedicated_task {
        Some(t) => vec![spec.task_index(t)?],
        None => (0..n_tasks).collect(),
    };
    let width = spec.model.input_width;
    if let Some(t) = train_tracks.iter().chain(val_tracks).find(|t| t.mixture_mag.rows != spec.model.input_height + 1) {
        return Err(Error::Data(format!(
            "track `{}` has {} frequency bins, the model takes {}",
            t.id,
            t.mixture_mag.rows - 1,
            spec.model.input_height
        )));
    }

    let mut model = build_model::<f32>(&spec.model, spec.generator.as_ref(), cfg.seed)?;
    let mut adam = Adam::new(cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.epsilon, &model);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_5eed);
    let val_set = validation_set(val_tracks, &tasks, width)?;
    let mut stopper = EarlyStopping::new(cfg.patience);
    let mut best: Option<Checkpoint> = None;
    let mut history = Vec::new();
    let mut progressive_weights = Vec::new();
    let mut stopped_early = false;
    let progressive = cfg.progressive && conditioned;
    // counts instances from 1, so the first weighted one is the 5th
    let mut counter: u64 = 0;

    for epoch in 1..=cfg.max_epochs {
        let mut loss_sum = 0.0;
        let mut seen = 0;
        while seen < cfg.instances_per_epoch {
            let n = cfg.batch_size.min(cfg.instances_per_epoch - seen);
            let mut batch = Vec::with_capacity(n);
            for _ in 0..n {
                let task = tasks[round_robin_task(counter, tasks.len())];
                counter += 1;
                let mut inst = sample_instance(train_tracks, task, width, &mut rng)?;
                if progressive {
                    let (z, y, w) = progressive_weight(&inst.z, &inst.y.values, counter, cfg.progressive_period, &mut rng);
                    if let Some(w) = w {
                        progressive_weights.push(w);
                    }
                    inst.z = z;
                    inst.y.values = y;
                }
                batch.push(inst);
            }
            let (x, y, z) = batch_tensors(&batch, conditioned);
            model.zero_grad();
            let cache = model.forward(&x, z.as_deref(), Mode::Train { seed: rng.gen() })?;
            let loss = model.backward(&cache, &y)? as f64;
            if !loss.is_finite() {
                return Err(Error::NonFinite(format!("loss {loss} at epoch {epoch}, instance {counter}")));
            }
            model.update_running(&cache);
            adam.update(&mut model);
            loss_sum += loss;
            seen += n;
        }
        let train_loss = loss_sum / seen as f64;
        let val_loss = if val_set.is_empty() { f64::NAN } else { validation_loss(&model, &val_set, cfg.batch_size)? };
        if !(val_set.is_empty() || val_loss.is_finite()) {
            return Err(Error::NonFinite(format!("validation loss {val_loss} at epoch {epoch}")));
        }
        log::info!("epoch {epoch}: train loss {train_loss:.4}, validation loss {val_loss:.4}");
        history.push(EpochRecord { epoch, train_loss, val_loss });
        let snapshot = |model: &Cunet<f32>, adam: &Adam<f32>| Checkpoint {
            spec: spec.clone(),
            model: model.clone(),
            optimizer: adam.clone(),
            epoch,
            val_loss,
        };
        if val_set.is_empty() {
            best = Some(snapshot(&model, &adam));
            continue;
        }
        let (improved, stop) = stopper.observe(epoch, val_loss);
        if improved {
            best = Some(snapshot(&model, &adam));
        }
        if stop {
            stopped_early = true;
            break;
        }
    }
    Ok(TrainOutcome { checkpoint: best.expect("at least one epoch ran"), history, stopped_early, progressive_weights })
}
