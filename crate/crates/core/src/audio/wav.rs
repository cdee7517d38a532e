use std::io::{Cursor, Read};
use std::path::Path;

use hound::{SampleFormat as HoundFormat, WavSpec};

use super::AudioSignal;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SampleFormat {
    #[default]
    Int16,
    Float32,
}

/// Reads 16-bit integer or 32-bit float PCM; channels are averaged to mono.
pub fn load_wav(path: impl AsRef<Path>) -> Result<AudioSignal> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::NotFound(path.to_path_buf()),
        _ => Error::Io(e),
    })?;
    decode_wav(&bytes).map_err(|e| match e {
        Error::Format(msg) => Error::Format(format!("{}: {msg}", path.display())),
        other => other,
    })
}

pub fn decode_wav(bytes: &[u8]) -> Result<AudioSignal> {
    let reader = hound::WavReader::new(Cursor::new(bytes)).map_err(|e| Error::format(e.to_string()))?;
    let spec = reader.spec();
    if spec.channels == 0 {
        return Err(Error::format("zero channels"));
    }
    if spec.sample_rate == 0 {
        return Err(Error::format("zero sample rate"));
    }
    let channels = spec.channels as usize;
    let interleaved = match (spec.sample_format, spec.bits_per_sample) {
        (HoundFormat::Int, 16) => collect(reader, |s: i16| s as f64 / 32768.0)?,
        (HoundFormat::Float, 32) => collect(reader, |s: f32| s as f64)?,
        (fmt, bits) => return Err(Error::format(format!("unsupported sample format {fmt:?} with {bits} bits"))),
    };
    if interleaved.len() % channels != 0 {
        return Err(Error::format("sample count is not a multiple of the channel count"));
    }
    let samples: Vec<f64> = interleaved
        .chunks_exact(channels)
        .map(|frame| frame.iter().sum::<f64>() / channels as f64)
        .collect();
    AudioSignal::new(samples, spec.sample_rate).map_err(|e| Error::format(e.to_string()))
}

fn collect<R: Read, S: hound::Sample>(reader: hound::WavReader<R>, scale: impl Fn(S) -> f64) -> Result<Vec<f64>> {
    reader
        .into_samples::<S>()
        .map(|s| s.map(&scale).map_err(|e| Error::format(e.to_string())))
        .collect()
}

pub fn encode_wav(signal: &AudioSignal, format: SampleFormat) -> Result<Vec<u8>> {
    let spec = WavSpec {
        channels: 1,
        sample_rate: signal.sample_rate,
        bits_per_sample: match format {
            SampleFormat::Int16 => 16,
            SampleFormat::Float32 => 32,
        },
        sample_format: match format {
            SampleFormat::Int16 => HoundFormat::Int,
            SampleFormat::Float32 => HoundFormat::Float,
        },
    };
    let mut buf = Cursor::new(Vec::new());
    {
        let mut w = hound::WavWriter::new(&mut buf, spec).map_err(|e| Error::format(e.to_string()))?;
        for &s in &signal.samples {
            let r = match format {
                SampleFormat::Int16 => w.write_sample((s.clamp(-1.0, 1.0) * 32767.0).round() as i16),
                SampleFormat::Float32 => w.write_sample(s as f32),
            };
            r.map_err(|e| Error::format(e.to_string()))?;
        }
        w.finalize().map_err(|e| Error::format(e.to_string()))?;
    }
    Ok(buf.into_inner())
}

pub fn write_wav(path: impl AsRef<Path>, signal: &AudioSignal, format: SampleFormat) -> Result<()> {
    std::fs::write(path, encode_wav(signal, format)?)?;
    Ok(())
}
