//! Data handling, optimization and checkpoints.

mod checkpoint;
mod dataset;
mod optim;
mod sampler;
mod synth;
mod train;

pub use checkpoint::{load_checkpoint, load_checkpoint_for, parse_checkpoint, save_checkpoint, Checkpoint, ModelSpec};
pub use dataset::{
    default_tasks, load_track, split_dataset, Dataset, DatasetSplit, Manifest, Partition, Track, DEFAULT_TASKS,
    MANIFEST_FILE,
};
pub use optim::{Adam, EarlyStopping};
pub use sampler::{instance_at, progressive_weight, round_robin_task, sample_instance, Instance};
pub use synth::{synth_dataset, synth_track};
pub use train::{train, train_on_tracks, EpochRecord, TrainConfig, TrainOutcome};
