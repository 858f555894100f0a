//! WAV input/output (PCM16 and float32, any channel count).

use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use crate::error::{Error, Result};

pub const PIPELINE_SAMPLE_RATE: u32 = 16_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WavFormat {
    Pcm16,
    Float32,
}

/// Deinterleaved audio, one `Vec` per channel.
#[derive(Debug, Clone, PartialEq)]
pub struct Audio {
    pub sample_rate: u32,
    pub channels: Vec<Vec<f64>>,
}

impl Audio {
    pub fn num_channels(&self) -> usize {
        self.channels.len()
    }

    pub fn len(&self) -> usize {
        self.channels.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn require_rate(&self, rate: u32) -> Result<()> {
        if self.sample_rate != rate {
            return Err(Error::SampleRate {
                found: self.sample_rate,
                expected: rate,
            });
        }
        Ok(())
    }
}

pub fn read_wav(path: impl AsRef<Path>) -> Result<Audio> {
    let path = path.as_ref();
    let reader = WavReader::open(path)?;
    let spec = reader.spec();
    let nch = spec.channels as usize;
    let interleaved: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Float, 32) => reader
            .into_samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<std::result::Result<_, _>>()?,
        (SampleFormat::Int, bits) if bits <= 32 => {
            let scale = 1.0 / (1u64 << (bits - 1)) as f64;
            reader
                .into_samples::<i32>()
                .map(|s| s.map(|v| v as f64 * scale))
                .collect::<std::result::Result<_, _>>()?
        }
        (fmt, bits) => {
            return Err(Error::Parse(format!(
                "{}: unsupported sample format {fmt:?}/{bits}",
                path.display()
            )))
        }
    };
    let mut channels = vec![Vec::with_capacity(interleaved.len() / nch.max(1)); nch];
    for frame in interleaved.chunks_exact(nch) {
        for (c, &v) in channels.iter_mut().zip(frame) {
            c.push(v);
        }
    }
    Ok(Audio {
        sample_rate: spec.sample_rate,
        channels,
    })
}

/// Reads a WAV file and enforces the 16 kHz pipeline rate.
pub fn read_pipeline_wav(path: impl AsRef<Path>) -> Result<Audio> {
    let audio = read_wav(path)?;
    audio.require_rate(PIPELINE_SAMPLE_RATE)?;
    Ok(audio)
}

pub fn write_wav(
    path: impl AsRef<Path>,
    channels: &[Vec<f64>],
    sample_rate: u32,
    format: WavFormat,
) -> Result<()> {
    let path = path.as_ref();
    if channels.is_empty() {
        return Err(Error::ShapeMismatch("cannot write a WAV with no channels".into()));
    }
    let len = channels[0].len();
    if channels.iter().any(|c| c.len() != len) {
        return Err(Error::ShapeMismatch("channels have different lengths".into()));
    }
    let spec = WavSpec {
        channels: channels.len() as u16,
        sample_rate,
        bits_per_sample: match format {
            WavFormat::Pcm16 => 16,
            WavFormat::Float32 => 32,
        },
        sample_format: match format {
            WavFormat::Pcm16 => SampleFormat::Int,
            WavFormat::Float32 => SampleFormat::Float,
        },
    };
    let mut writer = WavWriter::create(path, spec)?;
    for i in 0..len {
        for c in channels {
            match format {
                WavFormat::Pcm16 => {
                    let v = (c[i] * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
                    writer.write_sample(v)?;
                }
                WavFormat::Float32 => writer.write_sample(c[i] as f32)?,
            }
        }
    }
    writer.finalize()?;
    Ok(())
}
