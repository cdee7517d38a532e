use std::f64::consts::PI;

use super::AudioSignal;
use crate::error::{Error, Result};

const KAISER_BETA: f64 = 8.6;
/// Zero crossings of the interpolation kernel on each side of the centre.
const HALF_ZERO_CROSSINGS: f64 = 32.0;

/// Modified Bessel function of the first kind, order zero.
fn bessel_i0(x: f64) -> f64 {
    let mut sum = 1.0;
    let mut term = 1.0;
    let q = x * x / 4.0;
    for k in 1..64 {
        term *= q / (k * k) as f64;
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        (PI * x).sin() / (PI * x)
    }
}

/// Band-limited resampling with a Kaiser-windowed sinc kernel. The
/// low-pass cutoff sits at the lower of the two Nyquist frequencies.
pub fn resample(signal: &AudioSignal, target_rate: u32) -> Result<AudioSignal> {
    if target_rate == 0 {
        return Err(Error::Input("target sample rate must be positive".into()));
    }
    if target_rate == signal.sample_rate {
        return Ok(signal.clone());
    }
    let ratio = target_rate as f64 / signal.sample_rate as f64;
    let out_len = (signal.len() as f64 * ratio).round() as usize;
    // cutoff as a fraction of the input Nyquist
    let scale = ratio.min(1.0);
    let half_width = HALF_ZERO_CROSSINGS / scale;
    let norm = bessel_i0(KAISER_BETA);
    let x = &signal.samples;
    let samples = (0..out_len)
        .map(|n| {
            let t = n as f64 / ratio;
            let lo = (t - half_width).ceil().max(0.0) as usize;
            let hi = ((t + half_width).floor() as usize).min(x.len().saturating_sub(1));
            let mut acc = 0.0;
            for (k, &xv) in x.iter().enumerate().take(hi + 1).skip(lo) {
                let d = t - k as f64;
                let u = d / half_width;
                if u.abs() >= 1.0 {
                    continue;
                }
                let window = bessel_i0(KAISER_BETA * (1.0 - u * u).sqrt()) / norm;
                acc += xv * scale * sinc(scale * d) * window;
            }
            acc
        })
        .collect();
    AudioSignal::new(samples, target_rate)
}
