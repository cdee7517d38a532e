use std::f64::consts::TAU;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::dataset::{Manifest, Partition, DEFAULT_TASKS};
use crate::audio::{write_wav, AudioSignal, SampleFormat, SAMPLE_RATE};
use crate::error::{Error, Result};

const RATE: f64 = SAMPLE_RATE as f64;

/// Short linear fade at both ends of a note.
fn envelope(i: usize, len: usize, ramp: usize) -> f64 {
    let ramp = ramp.min(len / 2).max(1);
    let a = (i as f64 / ramp as f64).min(1.0);
    let r = ((len - i) as f64 / ramp as f64).min(1.0);
    a.min(r)
}

/// Harmonic notes with vibrato, fundamentals 200-400 Hz, partials below 950 Hz.
fn vocals<R: Rng>(len: usize, rng: &mut R) -> Vec<f64> {
    let mut out = vec![0.0; len];
    let mut t = 0;
    while t < len {
        let note = (rng.gen_range(0.4..1.2) * RATE) as usize;
        let rest = (rng.gen_range(0.0..0.3) * RATE) as usize;
        let f0 = rng.gen_range(200.0..400.0);
        let rate = rng.gen_range(4.5..6.5);
        let depth = rng.gen_range(0.01..0.025);
        let harmonics = (1..=6).filter(|h| *h as f64 * f0 * (1.0 + depth) < 950.0).collect::<Vec<_>>();
        let mut phase = 0.0;
        let end = (t + note).min(len);
        for (i, o) in out[t..end].iter_mut().enumerate() {
            let f = f0 * (1.0 + depth * (TAU * rate * i as f64 / RATE).sin());
            phase += TAU * f / RATE;
            let s: f64 = harmonics.iter().map(|&h| (h as f64 * phase).sin() / h as f64).sum();
            *o = 0.09 * s * envelope(i, end - t, 160);
        }
        t = end + rest;
    }
    out
}

/// White-noise bursts with a 40 ms exponential decay on a fixed period.
fn drums<R: Rng>(len: usize, rng: &mut R) -> Vec<f64> {
    let period = (rng.gen_range(0.43..0.6) * RATE) as usize;
    let mut t = (rng.gen_range(0.0..0.2) * RATE) as usize;
    let mut out = vec![0.0; len];
    while t < len {
        let gain = rng.gen_range(0.15..0.24);
        let end = (t + (0.25 * RATE) as usize).min(len);
        for (i, o) in out[t..end].iter_mut().enumerate() {
            *o = gain * rng.gen_range(-1.0..1.0) * (-(i as f64) / (0.04 * RATE)).exp();
        }
        t += period;
    }
    out
}

/// Sine notes between 40 and 120 Hz.
fn bass<R: Rng>(len: usize, rng: &mut R) -> Vec<f64> {
    let mut out = vec![0.0; len];
    let mut t = 0;
    while t < len {
        let note = (rng.gen_range(0.5..1.0) * RATE) as usize;
        let f = rng.gen_range(40.0..120.0);
        let end = (t + note).min(len);
        for (i, o) in out[t..end].iter_mut().enumerate() {
            *o = 0.22 * (TAU * f * i as f64 / RATE).sin() * envelope(i, end - t, 400);
        }
        t = end;
    }
    out
}

/// Slow linear chirps inside 1-3 kHz.
fn rest<R: Rng>(len: usize, rng: &mut R) -> Vec<f64> {
    let mut out = vec![0.0; len];
    let mut t = 0;
    let mut phase = 0.0;
    while t < len {
        let dur = rng.gen_range(2.0..4.0);
        let (fa, fb) = (rng.gen_range(1000.0..3000.0), rng.gen_range(1000.0..3000.0));
        let end = (t + (dur * RATE) as usize).min(len);
        let n = end - t;
        for (i, o) in out[t..end].iter_mut().enumerate() {
            let f = fa + (fb - fa) * i as f64 / n as f64;
            phase += TAU * f / RATE;
            *o = 0.08 * phase.sin() * envelope(i, n, 800);
        }
        t = end;
    }
    out
}

/// Stems in task order and their exact sum.
pub fn synth_track(duration_s: f64, seed: u64) -> Result<(Vec<AudioSignal>, AudioSignal)> {
    let len = (duration_s * RATE).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let stems = [vocals(len, &mut rng), drums(len, &mut rng), bass(len, &mut rng), rest(len, &mut rng)];
    // round through f32 first so the stored mixture is the sum of the
    // stored stems up to one more rounding
    let stems: Vec<Vec<f64>> = stems.iter().map(|s| s.iter().map(|&v| v as f32 as f64).collect()).collect();
    let mixture: Vec<f64> = (0..len).map(|i| stems.iter().map(|s| s[i]).sum()).collect();
    let stems = stems.into_iter().map(|s| AudioSignal::new(s, SAMPLE_RATE)).collect::<Result<Vec<_>>>()?;
    Ok((stems, AudioSignal::new(mixture, SAMPLE_RATE)?))
}

/// Writes `n_tracks` synthetic tracks as 32-bit float WAV; the last `n_test`
/// form the test partition. Returns the manifest, also saved in `out_dir`.
pub fn synth_dataset(n_tracks: usize, n_test: usize, duration_s: f64, seed: u64, out_dir: &Path) -> Result<Manifest> {
    if duration_s < 4.0 {
        return Err(Error::Input(format!("synthetic tracks need at least 4 s, got {duration_s}")));
    }
    if n_tracks == 0 {
        return Err(Error::Input("a dataset needs at least one track".into()));
    }
    if n_test > n_tracks {
        return Err(Error::Input("more test tracks than tracks".into()));
    }
    std::fs::create_dir_all(out_dir)?;
    let mut manifest = Manifest::default();
    for k in 0..n_tracks {
        let id = format!("synth{k:03}");
        let dir = out_dir.join(&id);
        std::fs::create_dir_all(&dir)?;
        let track_seed = seed.wrapping_mul(0x2545_f491_4f6c_dd1d).wrapping_add(k as u64);
        let (stems, mixture) = synth_track(duration_s, track_seed)?;
        write_wav(dir.join("mixture.wav"), &mixture, SampleFormat::Float32)?;
        for (name, stem) in DEFAULT_TASKS.iter().zip(&stems) {
            write_wav(dir.join(format!("{name}.wav")), stem, SampleFormat::Float32)?;
        }
        let partition = if k < n_tracks - n_test { Partition::Train } else { Partition::Test };
        manifest.tracks.push((partition, id));
    }
    manifest.save(out_dir)?;
    Ok(manifest)
}
