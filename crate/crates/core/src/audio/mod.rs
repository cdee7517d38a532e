//! Audio I/O, resampling, STFT/ISTFT and the magnitude-patch pipeline.

mod resample;
mod spectrogram;
mod stft;
mod wav;

pub use resample::resample;
pub use spectrogram::{
    polar_parts,
    accompaniment, concat_patches, extract_patches, normalize_per_song, normalize_with_scale,
    reconstruct, MagnitudeSpectrogram, Patch, PhaseSpectrogram,
};
pub use stft::{hann_window, istft, stft, ComplexSpectrogram};
pub use wav::{decode_wav, encode_wav, load_wav, write_wav, SampleFormat};

use crate::error::{Error, Result};

/// Working sample rate of the separation pipeline.
pub const SAMPLE_RATE: u32 = 8192;
pub const WINDOW_SIZE: usize = 1024;
pub const HOP: usize = 768;
pub const PATCH_FRAMES: usize = 128;
/// STFT bins kept per patch; the Nyquist bin is dropped.
pub const PATCH_BINS: usize = WINDOW_SIZE / 2;

/// Mono time-domain signal.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioSignal {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl AudioSignal {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::Input("sample rate must be positive".into()));
        }
        if samples.iter().any(|s| !s.is_finite()) {
            return Err(Error::Domain("audio contains non-finite samples".into()));
        }
        Ok(AudioSignal { samples, sample_rate })
    }

    pub fn silence(len: usize, sample_rate: u32) -> Self {
        AudioSignal { samples: vec![0.0; len], sample_rate }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    /// Zero-pad or truncate to `len` samples.
    pub fn with_len(mut self, len: usize) -> Self {
        self.samples.resize(len, 0.0);
        self
    }

    /// Samplewise sum; lengths and rates must agree.
    pub fn sum<'a>(signals: impl IntoIterator<Item = &'a AudioSignal>) -> Result<AudioSignal> {
        let mut it = signals.into_iter();
        let first = it.next().ok_or_else(|| Error::Input("nothing to sum".into()))?;
        let mut out = first.clone();
        for s in it {
            if s.len() != out.len() || s.sample_rate != out.sample_rate {
                return Err(Error::shape("signals differ in length or sample rate"));
            }
            out.samples.iter_mut().zip(&s.samples).for_each(|(a, b)| *a += b);
        }
        Ok(out)
    }

    pub fn energy(&self) -> f64 {
        self.samples.iter().map(|s| s * s).sum()
    }
}
