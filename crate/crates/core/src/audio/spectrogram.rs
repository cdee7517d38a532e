use num_complex::Complex64;

use super::stft::{istft, ComplexSpectrogram};
use super::AudioSignal;
use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Magnitudes `[frequency_bins x frames]` together with the factor they were
/// divided by. An unnormalized spectrogram has `norm_scale == 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct MagnitudeSpectrogram {
    pub values: Matrix,
    pub norm_scale: f64,
}

/// Phase angles in radians, plus the STFT geometry needed to invert them.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseSpectrogram {
    pub angles: Matrix,
    pub window_size: usize,
    pub hop: usize,
    pub sample_rate: u32,
}

impl MagnitudeSpectrogram {
    pub fn new(values: Matrix) -> Result<Self> {
        if values.data.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::Domain("magnitudes must be finite and non-negative".into()));
        }
        Ok(MagnitudeSpectrogram { values, norm_scale: 1.0 })
    }

    pub fn frequency_bins(&self) -> usize {
        self.values.rows
    }

    pub fn frames(&self) -> usize {
        self.values.cols
    }

    pub fn max(&self) -> f64 {
        self.values.max()
    }

    /// Magnitudes with the normalization undone.
    pub fn denormalized(&self) -> Matrix {
        let mut m = self.values.clone();
        m.data.iter_mut().for_each(|v| *v *= self.norm_scale);
        m
    }
}

/// Split an STFT into magnitude and phase.
pub fn polar_parts(spec: &ComplexSpectrogram) -> (MagnitudeSpectrogram, PhaseSpectrogram) {
    let (rows, cols) = (spec.frequency_bins, spec.frames);
    let values = Matrix::from_vec(rows, cols, spec.bins.iter().map(|c| c.norm()).collect());
    let angles = Matrix::from_vec(rows, cols, spec.bins.iter().map(|c| c.arg()).collect());
    (
        MagnitudeSpectrogram { values, norm_scale: 1.0 },
        PhaseSpectrogram {
            angles,
            window_size: spec.window_size,
            hop: spec.hop,
            sample_rate: spec.sample_rate,
        },
    )
}

/// Divide by the spectrogram's own maximum.
pub fn normalize_per_song(mag: &MagnitudeSpectrogram) -> Result<MagnitudeSpectrogram> {
    let max = mag.max();
    if !(max > 0.0) {
        return Err(Error::DegenerateInput("spectrogram is all zeros".into()));
    }
    let mut out = normalize_with_scale(mag, max)?;
    out.norm_scale = mag.norm_scale * max;
    Ok(out)
}

/// Divide by an externally chosen scale, typically the mixture maximum when
/// normalizing one of its stems.
pub fn normalize_with_scale(mag: &MagnitudeSpectrogram, scale: f64) -> Result<MagnitudeSpectrogram> {
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::DegenerateInput(format!("normalization scale {scale}")));
    }
    let mut values = mag.values.clone();
    values.data.iter_mut().for_each(|v| *v /= scale);
    Ok(MagnitudeSpectrogram { values, norm_scale: mag.norm_scale * scale })
}

/// Fixed-width slice of a magnitude spectrogram with the top bin removed.
#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    pub values: Matrix,
    pub source_track: String,
    pub frame_offset: usize,
    /// Frames taken from the source; the rest are zero padding.
    pub valid_frames: usize,
}

impl Patch {
    pub fn is_padded(&self) -> bool {
        self.valid_frames < self.values.cols
    }
}

pub fn extract_patches(mag: &MagnitudeSpectrogram, width: usize, track: &str) -> Result<Vec<Patch>> {
    if width == 0 {
        return Err(Error::config("patch width must be positive"));
    }
    if mag.frequency_bins() < 2 {
        return Err(Error::shape("spectrogram needs at least two frequency bins"));
    }
    let rows = mag.frequency_bins() - 1;
    let frames = mag.frames();
    let count = frames.div_ceil(width).max(1);
    Ok((0..count)
        .map(|p| {
            let offset = p * width;
            Patch {
                values: mag.values.submatrix(0, rows, offset, width),
                source_track: track.to_string(),
                frame_offset: offset,
                valid_frames: frames.saturating_sub(offset).min(width),
            }
        })
        .collect())
}

/// Concatenate patch matrices along time and keep the first `frames` columns.
pub fn concat_patches(patches: &[Matrix], frames: usize) -> Result<Matrix> {
    let rows = patches.first().map_or(0, |p| p.rows);
    if patches.iter().any(|p| p.rows != rows) {
        return Err(Error::shape("patches differ in frequency rows"));
    }
    let total: usize = patches.iter().map(|p| p.cols).sum();
    if total < frames {
        return Err(Error::shape(format!("patches cover {total} frames, need {frames}")));
    }
    let mut out = Matrix::zeros(rows, frames);
    let mut t0 = 0;
    for p in patches {
        for t in 0..p.cols {
            if t0 + t >= frames {
                break;
            }
            for f in 0..rows {
                out.set(f, t0 + t, p.get(f, t));
            }
        }
        t0 += p.cols;
    }
    Ok(out)
}

/// Rebuild audio from estimated (normalized) patch magnitudes and the
/// mixture phase. The dropped top bin is restored as zeros.
pub fn reconstruct(estimated: &[Matrix], mix_phase: &PhaseSpectrogram, norm_scale: f64) -> Result<AudioSignal> {
    let bins = mix_phase.angles.rows;
    let frames = mix_phase.angles.cols;
    let last_width = estimated.last().map_or(0, |p| p.cols);
    let total: usize = estimated.iter().map(|p| p.cols).sum();
    if total < frames || total - frames >= last_width.max(1) && total != frames {
        return Err(Error::shape(format!(
            "patches cover {total} frames but the mixture phase has {frames}"
        )));
    }
    if estimated.iter().any(|p| p.rows + 1 != bins) {
        return Err(Error::shape(format!("patches must have {} frequency rows", bins - 1)));
    }
    let mags = concat_patches(estimated, frames)?;
    let mut spec = ComplexSpectrogram::zeros(frames, mix_phase.window_size, mix_phase.hop, mix_phase.sample_rate);
    if spec.frequency_bins != bins {
        return Err(Error::shape("phase rows disagree with the window size"));
    }
    for f in 0..bins - 1 {
        for t in 0..frames {
            let m = mags.get(f, t) * norm_scale;
            spec.set(f, t, Complex64::from_polar(m, mix_phase.angles.get(f, t)));
        }
    }
    istft(&spec)
}

/// Samplewise `mix - estimate`.
pub fn accompaniment(mix: &AudioSignal, estimate: &AudioSignal) -> Result<AudioSignal> {
    if mix.len() != estimate.len() || mix.sample_rate != estimate.sample_rate {
        return Err(Error::shape(format!(
            "mixture has {} samples at {} Hz, estimate {} at {} Hz",
            mix.len(),
            mix.sample_rate,
            estimate.len(),
            estimate.sample_rate
        )));
    }
    let samples = mix.samples.iter().zip(&estimate.samples).map(|(a, b)| a - b).collect();
    AudioSignal::new(samples, mix.sample_rate)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::stft::stft;
    use std::f64::consts::PI;

    fn mag(rows: usize, cols: usize) -> MagnitudeSpectrogram {
        MagnitudeSpectrogram::new(Matrix::from_fn(rows, cols, |f, t| ((f * 31 + t * 7) % 13) as f64)).unwrap()
    }

    #[test]
    fn normalize_divides_by_max() {
        let m = MagnitudeSpectrogram::new(Matrix::from_vec(1, 3, vec![1.0, 4.0, 2.0])).unwrap();
        let n = normalize_per_song(&m).unwrap();
        assert_eq!(n.max(), 1.0);
        assert_eq!(n.norm_scale, 4.0);
        let again = normalize_per_song(&n).unwrap();
        assert_eq!(again.values, n.values);
        assert_eq!(again.norm_scale, 4.0);
        let unit = MagnitudeSpectrogram::new(Matrix::from_vec(1, 2, vec![1.0, 0.5])).unwrap();
        let u = normalize_per_song(&unit).unwrap();
        assert_eq!((u.values.clone(), u.norm_scale), (unit.values, 1.0));
    }

    #[test]
    fn stem_shares_mixture_scale() {
        let stem = MagnitudeSpectrogram::new(Matrix::from_vec(1, 2, vec![2.0, 1.0])).unwrap();
        assert_eq!(normalize_with_scale(&stem, 4.0).unwrap().max(), 0.5);
    }

    #[test]
    fn all_zero_is_degenerate() {
        let z = MagnitudeSpectrogram::new(Matrix::zeros(3, 3)).unwrap();
        assert!(matches!(normalize_per_song(&z), Err(Error::DegenerateInput(_))));
    }

    #[test]
    fn patch_offsets_and_padding() {
        let p = extract_patches(&mag(513, 256), 128, "t").unwrap();
        assert_eq!(p.iter().map(|p| p.frame_offset).collect::<Vec<_>>(), vec![0, 128]);
        assert!(p.iter().all(|p| !p.is_padded()));

        let m = mag(513, 300);
        let p = extract_patches(&m, 128, "t").unwrap();
        assert_eq!(p.len(), 3);
        assert!(p[2].is_padded() && p[2].valid_frames == 44);
        for f in 0..512 {
            for t in 0..128 {
                let want = if t < 44 { m.values.get(f, 256 + t) } else { 0.0 };
                assert_eq!(p[2].values.get(f, t), want);
            }
        }
    }

    #[test]
    fn top_bin_is_dropped() {
        let p = extract_patches(&mag(513, 128), 128, "t").unwrap();
        assert_eq!(p.len(), 1);
        assert_eq!(p[0].values.shape(), (512, 128));
    }

    #[test]
    fn short_spectrogram_gives_one_padded_patch() {
        let p = extract_patches(&mag(513, 10), 128, "t").unwrap();
        assert_eq!(p.len(), 1);
        assert_eq!(p[0].valid_frames, 10);
    }

    #[test]
    fn concat_inverts_extract() {
        let m = mag(9, 37);
        let p = extract_patches(&m, 8, "t").unwrap();
        let mats: Vec<Matrix> = p.into_iter().map(|p| p.values).collect();
        let back = concat_patches(&mats, 37).unwrap();
        assert_eq!(back, m.values.submatrix(0, 8, 0, 37));
    }

    fn tone(len: usize) -> AudioSignal {
        AudioSignal::new((0..len).map(|n| 0.3 * (2.0 * PI * 440.0 * n as f64 / 8192.0).sin()).collect(), 8192).unwrap()
    }

    #[test]
    fn mixture_magnitudes_reproduce_mixture() {
        let x = tone(1024 + 768 * 140);
        let spec = stft(&x, 1024, 768).unwrap();
        let (m, ph) = polar_parts(&spec);
        let n = normalize_per_song(&m).unwrap();
        let patches: Vec<Matrix> = extract_patches(&n, 128, "t").unwrap().into_iter().map(|p| p.values).collect();
        let y = reconstruct(&patches, &ph, n.norm_scale).unwrap();
        let mut trimmed = spec.clone();
        for t in 0..spec.frames {
            trimmed.set(512, t, Complex64::new(0.0, 0.0));
        }
        let want = istft(&trimmed).unwrap();
        let err: f64 = y.samples.iter().zip(&want.samples).map(|(a, b)| (a - b).powi(2)).sum();
        assert!((err / want.energy()).sqrt() < 1e-6);
    }

    #[test]
    fn single_patch_tone_round_trip() {
        let x = tone(1024 + 768 * 127);
        let spec = stft(&x, 1024, 768).unwrap();
        let (m, ph) = polar_parts(&spec);
        let patches: Vec<Matrix> = extract_patches(&m, 128, "t").unwrap().into_iter().map(|p| p.values).collect();
        assert_eq!(patches.len(), 1);
        let y = reconstruct(&patches, &ph, 1.0).unwrap();
        let interior = 1024..y.len() - 1024;
        let mse: f64 = interior.clone().map(|i| (y.samples[i] - x.samples[i]).powi(2)).sum::<f64>() / interior.len() as f64;
        assert!(mse.sqrt() < 1e-3);
    }

    #[test]
    fn zero_magnitudes_are_silent() {
        let spec = stft(&tone(4096), 1024, 768).unwrap();
        let (_, ph) = polar_parts(&spec);
        let y = reconstruct(&[Matrix::zeros(512, 128)], &ph, 3.0).unwrap();
        assert!(y.samples.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn frame_mismatch_is_a_shape_error() {
        let spec = stft(&tone(1024 + 768 * 200), 1024, 768).unwrap();
        let (_, ph) = polar_parts(&spec);
        let one = vec![Matrix::zeros(512, 128)];
        assert!(matches!(reconstruct(&one, &ph, 1.0), Err(Error::Shape(_))));
        let three = vec![Matrix::zeros(512, 128); 3];
        assert!(matches!(reconstruct(&three, &ph, 1.0), Err(Error::Shape(_))));
        let wrong_rows = vec![Matrix::zeros(511, 128); 2];
        assert!(matches!(reconstruct(&wrong_rows, &ph, 1.0), Err(Error::Shape(_))));
    }

    #[test]
    fn accompaniment_is_difference() {
        let a = tone(100);
        let b = AudioSignal::new((0..100).map(|i| (i as f64 * 0.01).cos()).collect(), 8192).unwrap();
        let mix = AudioSignal::sum([&a, &b]).unwrap();
        let rest = accompaniment(&mix, &a).unwrap();
        for (r, w) in rest.samples.iter().zip(&b.samples) {
            assert!((r - w).abs() < 1e-15);
        }
        assert!(accompaniment(&mix, &mix).unwrap().samples.iter().all(|&v| v == 0.0));
        assert_eq!(accompaniment(&mix, &AudioSignal::silence(100, 8192)).unwrap(), mix);
        assert!(matches!(accompaniment(&mix, &tone(99)), Err(Error::Shape(_))));
    }
}
