//! Float-32 WAV read/write for multichannel audio.

use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};
use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};

/// Writes `[channels x samples]` audio as float-32 WAV.
pub fn write_wav(path: impl AsRef<Path>, audio: ArrayView2<f64>, sample_rate_hz: f64) -> Result<()> {
    let (channels, samples) = audio.dim();
    if channels == 0 || channels > u16::MAX as usize {
        return Err(Error::InvalidArgument(format!("unsupported channel count {channels}")));
    }
    let spec = WavSpec {
        channels: channels as u16,
        sample_rate: sample_rate_hz.round() as u32,
        bits_per_sample: 32,
        sample_format: SampleFormat::Float,
    };
    let mut writer = WavWriter::create(path.as_ref(), spec)?;
    for i in 0..samples {
        for ch in 0..channels {
            writer.write_sample(audio[(ch, i)] as f32)?;
        }
    }
    writer.finalize()?;
    Ok(())
}

/// Reads a WAV file into `[channels x samples]` f64 plus its sample rate.
/// Accepts float-32 and 16/24/32-bit integer PCM.
pub fn read_wav(path: impl AsRef<Path>) -> Result<(Array2<f64>, f64)> {
    let mut reader = WavReader::open(path.as_ref())?;
    let spec = reader.spec();
    let channels = spec.channels as usize;
    let interleaved: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Float, 32) => reader
            .samples::<f32>()
            .map(|s| s.map(|v| v as f64))
            .collect::<std::result::Result<_, _>>()?,
        (SampleFormat::Int, bits) => {
            let scale = 1.0 / (1i64 << (bits - 1)) as f64;
            reader
                .samples::<i32>()
                .map(|s| s.map(|v| v as f64 * scale))
                .collect::<std::result::Result<_, _>>()?
        }
        (format, bits) => {
            return Err(Error::InvalidArgument(format!(
                "unsupported wav encoding {format:?}/{bits}"
            )))
        }
    };
    let samples = interleaved.len() / channels;
    let mut audio = Array2::zeros((channels, samples));
    for i in 0..samples {
        for ch in 0..channels {
            audio[(ch, i)] = interleaved[i * channels + ch];
        }
    }
    Ok((audio, spec.sample_rate as f64))
}

/// Reads a WAV and mixes it down to mono by averaging channels.
pub fn read_wav_mono(path: impl AsRef<Path>) -> Result<(Vec<f64>, f64)> {
    let (audio, fs) = read_wav(path)?;
    let (channels, samples) = audio.dim();
    let mono = (0..samples)
        .map(|i| (0..channels).map(|ch| audio[(ch, i)]).sum::<f64>() / channels as f64)
        .collect();
    Ok((mono, fs))
}
