use super::bss::{bss_decompose, metrics, Metrics};
use crate::audio::{
    extract_patches, normalize_per_song, polar_parts, reconstruct, resample, stft, AudioSignal, MagnitudeSpectrogram,
    PhaseSpectrogram, HOP, SAMPLE_RATE, WINDOW_SIZE,
};
use crate::conditioning::ConditionVector;
use crate::error::{Error, Result};
use crate::model::Cunet;
use crate::training::{ModelSpec, Track};

#[derive(Debug, Clone, PartialEq)]
pub struct EvalResult {
    pub track_id: String,
    pub task: String,
    pub sdr: f64,
    pub sir: f64,
    pub sar: f64,
}

impl EvalResult {
    pub fn new(track_id: &str, task: &str, m: Metrics) -> Self {
        EvalResult { track_id: track_id.into(), task: task.into(), sdr: m.sdr, sir: m.sir, sar: m.sar }
    }

    pub fn values(&self) -> [f64; 3] {
        [self.sdr, self.sir, self.sar]
    }
}

/// Run the mask network over every patch of the track and resynthesize the
/// masked magnitudes with the mixture phase.
pub fn separate_track(model: &Cunet<f32>, track: &Track, task_index: usize) -> Result<AudioSignal> {
    let mag = MagnitudeSpectrogram { values: track.mixture_mag.clone(), norm_scale: track.norm_scale };
    separate_magnitudes(model, &mag, &track.phase, task_index, &track.id, track.mixture.len())
}

/// Separate a raw mixture recording. The input is resampled to the working
/// rate and the output stays at that rate.
pub fn separate_signal(model: &Cunet<f32>, mixture: &AudioSignal, task_index: usize) -> Result<AudioSignal> {
    let mixture = resample(mixture, SAMPLE_RATE)?;
    let (mag, phase) = polar_parts(&stft(&mixture, WINDOW_SIZE, HOP)?);
    let mag = normalize_per_song(&mag)?;
    separate_magnitudes(model, &mag, &phase, task_index, "input", mixture.len())
}

fn separate_magnitudes(
    model: &Cunet<f32>,
    mag: &MagnitudeSpectrogram,
    phase: &PhaseSpectrogram,
    task_index: usize,
    id: &str,
    len: usize,
) -> Result<AudioSignal> {
    let z = model.gen_config().map(|g| ConditionVector::one_hot(task_index, g.n_tasks)).transpose()?;
    let patches = extract_patches(mag, model.config().input_width, id)?;
    let estimated = patches
        .iter()
        .map(|p| Ok(model.forward_patch(&p.values, z.as_ref())?.masked_magnitude))
        .collect::<Result<Vec<_>>>()?;
    let audio = reconstruct(&estimated, phase, mag.norm_scale)?;
    Ok(audio.with_len(len))
}

/// Metrics of an arbitrary estimate against {target stem, sum of the other
/// stems}.
pub fn score_estimate(estimate: &AudioSignal, track: &Track, task_index: usize, filter_len: usize) -> Result<Metrics> {
    let target = track.stems.get(task_index).ok_or(Error::Index { index: task_index, len: track.stems.len() })?;
    if target.energy() == 0.0 {
        return Err(Error::UndefinedMetric(format!("stem {task_index} of `{}` is silent", track.id)));
    }
    let accompaniment = track.accompaniment_of(task_index)?;
    let estimate = estimate.clone().with_len(target.len());
    let d = bss_decompose(&estimate.samples, &[target.samples.clone(), accompaniment.samples], 0, filter_len)?;
    metrics(&d)
}

pub fn evaluate_track(model: &Cunet<f32>, spec: &ModelSpec, track: &Track, task: &str, filter_len: usize) -> Result<EvalResult> {
    let index = spec.task_index(task)?;
    if let Some(d) = &spec.dedicated_task {
        if d != task {
            return Err(Error::Input(format!("model is dedicated to `{d}`, not `{task}`")));
        }
    }
    let estimate = separate_track(model, track, index)?;
    Ok(EvalResult::new(&track.id, task, score_estimate(&estimate, track, index, filter_len)?))
}

/// The unprocessed mixture used as the estimate for every task.
pub fn mixture_baseline(track: &Track, tasks: &[String], filter_len: usize) -> Result<Vec<EvalResult>> {
    let mut out = Vec::new();
    for (i, task) in tasks.iter().enumerate() {
        match score_estimate(&track.mixture, track, i, filter_len) {
            Ok(m) => out.push(EvalResult::new(&track.id, task, m)),
            Err(Error::UndefinedMetric(msg)) => log::warn!("skipping {task} on {}: {msg}", track.id),
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

/// Every task the model handles on every track; rows with an undefined
/// metric (silent target) are left out.
pub fn evaluate_model(model: &Cunet<f32>, spec: &ModelSpec, tracks: &[Track], filter_len: usize) -> Result<Vec<EvalResult>> {
    let tasks: Vec<&String> = match &spec.dedicated_task {
        Some(t) => vec![t],
        None => spec.tasks.iter().collect(),
    };
    let mut out = Vec::new();
    for track in tracks {
        for task in &tasks {
            match evaluate_track(model, spec, track, task, filter_len) {
                Ok(r) => out.push(r),
                Err(Error::UndefinedMetric(msg)) => log::warn!("skipping {task} on {}: {msg}", track.id),
                Err(e) => return Err(e),
            }
        }
    }
    Ok(out)
}
