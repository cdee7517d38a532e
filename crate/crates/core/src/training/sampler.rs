use rand::Rng;

use super::dataset::Track;
use crate::audio::Patch;
use crate::conditioning::ConditionVector;
use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// One training example: mixture patch, target stem patch and condition.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub x: Patch,
    pub y: Patch,
    pub z: ConditionVector,
}

/// Patch of `track` starting at `offset`, top bin dropped, zero-padded in time.
pub fn instance_at(track: &Track, task_index: usize, offset: usize, width: usize) -> Result<Instance> {
    let n_tasks = track.stem_mags.len();
    let z = ConditionVector::one_hot(task_index, n_tasks)?;
    let rows = track.mixture_mag.rows - 1;
    let valid = track.frames().saturating_sub(offset).min(width);
    let patch = |m: &Matrix| Patch {
        values: m.submatrix(0, rows, offset, width),
        source_track: track.id.clone(),
        frame_offset: offset,
        valid_frames: valid,
    };
    Ok(Instance { x: patch(&track.mixture_mag), y: patch(&track.stem_mags[task_index]), z })
}

/// Uniform track, then uniform offset among full-width windows (offset 0 for
/// tracks shorter than one patch).
pub fn sample_instance<R: Rng>(tracks: &[Track], task_index: usize, width: usize, rng: &mut R) -> Result<Instance> {
    if tracks.is_empty() {
        return Err(Error::Data("no tracks to sample from".into()));
    }
    let track = &tracks[rng.gen_range(0..tracks.len())];
    let max_offset = track.frames().saturating_sub(width);
    let offset = rng.gen_range(0..=max_offset);
    instance_at(track, task_index, offset, width)
}

/// Every `period`-th instance (by a counter that starts at 1) has its
/// condition and target scaled by one shared `w ~ U[0, 1]`.
pub fn progressive_weight<R: Rng>(
    z: &ConditionVector,
    y: &Matrix,
    counter: u64,
    period: u64,
    rng: &mut R,
) -> (ConditionVector, Matrix, Option<f64>) {
    if period == 0 || counter % period != 0 {
        return (z.clone(), y.clone(), None);
    }
    let w: f64 = rng.gen_range(0.0..=1.0);
    let mut y2 = y.clone();
    y2.data.iter_mut().for_each(|v| *v *= w);
    (z.scaled(w), y2, Some(w))
}

/// Task order for a conditioned run: strict round-robin.
pub fn round_robin_task(instance_index: u64, n_tasks: usize) -> usize {
    (instance_index % n_tasks as u64) as usize
}
