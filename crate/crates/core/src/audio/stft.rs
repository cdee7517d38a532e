use std::f64::consts::PI;

use num_complex::Complex64;
use rustfft::FftPlanner;

use super::AudioSignal;
use crate::error::{Error, Result};

/// Periodic Hann window.
pub fn hann_window(size: usize) -> Vec<f64> {
    (0..size).map(|n| 0.5 - 0.5 * (2.0 * PI * n as f64 / size as f64).cos()).collect()
}

/// One-sided STFT, `bins` stored frequency-major: bin `f` of frame `t` is
/// `bins[f * frames + t]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexSpectrogram {
    pub bins: Vec<Complex64>,
    pub frequency_bins: usize,
    pub frames: usize,
    pub window_size: usize,
    pub hop: usize,
    pub sample_rate: u32,
}

impl ComplexSpectrogram {
    pub fn zeros(frames: usize, window_size: usize, hop: usize, sample_rate: u32) -> Self {
        let frequency_bins = window_size / 2 + 1;
        ComplexSpectrogram {
            bins: vec![Complex64::new(0.0, 0.0); frequency_bins * frames],
            frequency_bins,
            frames,
            window_size,
            hop,
            sample_rate,
        }
    }

    #[inline]
    pub fn get(&self, f: usize, t: usize) -> Complex64 {
        self.bins[f * self.frames + t]
    }

    #[inline]
    pub fn set(&mut self, f: usize, t: usize, v: Complex64) {
        self.bins[f * self.frames + t] = v;
    }
}

pub fn stft(signal: &AudioSignal, window_size: usize, hop: usize) -> Result<ComplexSpectrogram> {
    if window_size < 2 || hop == 0 || hop > window_size {
        return Err(Error::config(format!("invalid STFT window {window_size} / hop {hop}")));
    }
    if signal.len() < window_size {
        return Err(Error::InputTooShort { needed: window_size, got: signal.len() });
    }
    let frames = 1 + (signal.len() - window_size) / hop;
    let window = hann_window(window_size);
    let fft = FftPlanner::new().plan_fft_forward(window_size);
    let mut spec = ComplexSpectrogram::zeros(frames, window_size, hop, signal.sample_rate);
    let mut buf = vec![Complex64::new(0.0, 0.0); window_size];
    for t in 0..frames {
        let seg = &signal.samples[t * hop..t * hop + window_size];
        for ((b, &x), &w) in buf.iter_mut().zip(seg).zip(&window) {
            *b = Complex64::new(x * w, 0.0);
        }
        fft.process(&mut buf);
        for f in 0..spec.frequency_bins {
            spec.set(f, t, buf[f]);
        }
    }
    Ok(spec)
}

/// Largest-to-smallest ratio tolerated in the overlapped squared window.
const NOLA_TOLERANCE: f64 = 1e-10;

/// Position-wise sum of squared windows over one hop period, in steady state.
fn window_square_sums(window: &[f64], hop: usize) -> Vec<f64> {
    (0..hop)
        .map(|n| window.iter().skip(n).step_by(hop).map(|w| w * w).sum())
        .collect()
}

/// Weighted overlap-add inverse: each inverse frame is multiplied by the
/// synthesis window and the sum is divided by the overlapped squared window.
/// Exact wherever frames overlap in steady state, provided that sum never
/// vanishes (the nonzero-overlap-add condition). Near the two ends fewer
/// frames contribute; there the divisor is clamped to its steady-state
/// minimum so edits to the spectrum are not amplified by a near-zero
/// window, which fades the outermost samples.
pub fn istft(spec: &ComplexSpectrogram) -> Result<AudioSignal> {
    let n = spec.window_size;
    let hop = spec.hop;
    if n < 2 || hop == 0 || hop > n || spec.frequency_bins != n / 2 + 1 {
        return Err(Error::config(format!("invalid STFT geometry {n} / {hop}")));
    }
    let window = hann_window(n);
    let sums = window_square_sums(&window, hop);
    let peak = sums.iter().copied().fold(0.0, f64::max);
    if sums.iter().any(|&s| s <= NOLA_TOLERANCE * peak) {
        return Err(Error::config(format!(
            "Hann window {n} with hop {hop} does not satisfy the overlap-add condition"
        )));
    }
    let len = if spec.frames == 0 { 0 } else { (spec.frames - 1) * hop + n };
    let mut out = vec![0.0; len];
    let mut norm = vec![0.0; len];
    let ifft = FftPlanner::new().plan_fft_inverse(n);
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    for t in 0..spec.frames {
        for f in 0..spec.frequency_bins {
            buf[f] = spec.get(f, t);
        }
        // Hermitian completion; imaginary parts at DC and Nyquist carry no
        // information for a real signal.
        buf[0].im = 0.0;
        if n % 2 == 0 {
            buf[n / 2].im = 0.0;
        }
        for f in spec.frequency_bins..n {
            buf[f] = buf[n - f].conj();
        }
        ifft.process(&mut buf);
        let start = t * hop;
        for (i, (b, &w)) in buf.iter().zip(&window).enumerate() {
            out[start + i] += b.re / n as f64 * w;
            norm[start + i] += w * w;
        }
    }
    let floor = sums.iter().copied().fold(f64::INFINITY, f64::min);
    for (o, &s) in out.iter_mut().zip(&norm) {
        *o /= s.max(floor);
    }
    AudioSignal::new(out, spec.sample_rate)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn noise(len: usize, seed: u64) -> AudioSignal {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        AudioSignal::new((0..len).map(|_| rng.gen_range(-1.0..1.0)).collect(), 8192).unwrap()
    }

    #[test]
    fn one_window_gives_one_frame_of_513_bins() {
        let s = stft(&noise(1024, 1), 1024, 768).unwrap();
        assert_eq!((s.frames, s.frequency_bins), (1, 513));
        let s = stft(&noise(1024 + 768 * 3 + 5, 1), 1024, 768).unwrap();
        assert_eq!(s.frames, 4);
    }

    #[test]
    fn short_signal_is_rejected() {
        assert!(matches!(stft(&noise(1000, 1), 1024, 768), Err(Error::InputTooShort { .. })));
    }

    #[test]
    fn zero_signal_gives_zero_bins() {
        let s = stft(&AudioSignal::silence(4096, 8192), 1024, 768).unwrap();
        assert!(s.bins.iter().all(|c| c.norm() == 0.0));
    }

    #[test]
    fn bin_centre_tone_peaks_at_its_bin() {
        let sig = AudioSignal::new(
            (0..1024).map(|n| (2.0 * PI * 8.0 * n as f64 / 1024.0).sin()).collect(),
            8192,
        )
        .unwrap();
        let s = stft(&sig, 1024, 768).unwrap();
        // direct DFT of the windowed segment
        let w = hann_window(1024);
        let dft = |f: usize| -> f64 {
            let mut acc = Complex64::new(0.0, 0.0);
            for (n, (&x, &wv)) in sig.samples.iter().zip(&w).enumerate() {
                acc += Complex64::from_polar(x * wv, -2.0 * PI * (f * n) as f64 / 1024.0);
            }
            acc.norm()
        };
        let argmax_direct = (0..513).max_by(|&a, &b| dft(a).total_cmp(&dft(b))).unwrap();
        let argmax_fft = (0..513).max_by(|&a, &b| s.get(a, 0).norm().total_cmp(&s.get(b, 0).norm())).unwrap();
        assert_eq!(argmax_direct, 8);
        assert_eq!(argmax_fft, 8);
        for f in [0, 7, 8, 9, 100] {
            assert!((dft(f) - s.get(f, 0).norm()).abs() < 1e-9);
        }
    }

    #[test]
    fn round_trip_recovers_interior_samples() {
        let x = noise(8192 * 3, 7);
        let y = istft(&stft(&x, 1024, 768).unwrap()).unwrap();
        let interior = 1024..y.len() - 1024;
        let err: f64 = interior.clone().map(|i| (y.samples[i] - x.samples[i]).powi(2)).sum();
        let energy: f64 = interior.map(|i| x.samples[i].powi(2)).sum();
        assert!((err / energy).sqrt() < 1e-6);
    }

    #[test]
    fn single_frame_is_recovered_where_the_window_is_nonzero() {
        let x = noise(1024, 3);
        let y = istft(&stft(&x, 1024, 768).unwrap()).unwrap();
        let w = hann_window(1024);
        assert_eq!(y.samples[0], 0.0);
        // smallest squared-window sum once frames overlap in steady state
        let floor = (0..768)
            .map(|n| (0..2).map(|k| n + 768 * k).filter(|&m| m < 1024).map(|m| w[m] * w[m]).sum::<f64>())
            .fold(f64::INFINITY, f64::min);
        for i in 1..1024 {
            // overlap-add by hand: (w * analysis frame) / w^2, divisor clamped
            let want = w[i] * (w[i] * x.samples[i]) / (w[i] * w[i]).max(floor);
            assert!((y.samples[i] - want).abs() < 1e-9, "sample {i}");
        }
    }

    #[test]
    fn zero_spectrogram_gives_silence() {
        let y = istft(&ComplexSpectrogram::zeros(5, 1024, 768, 8192)).unwrap();
        assert_eq!(y.len(), 4 * 768 + 1024);
        assert!(y.samples.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn hop_equal_to_window_is_rejected() {
        assert!(matches!(istft(&ComplexSpectrogram::zeros(2, 1024, 1024, 8192)), Err(Error::Config(_))));
    }
}
