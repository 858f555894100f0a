use num_complex::Complex64;

use super::stft::{Spectrogram, StftConfig, StftProcessor};
use crate::error::{Error, Result};

/// `M`-channel STFT stored as `[T][F][M]` so each time-frequency point holds
/// a contiguous channel vector.
#[derive(Debug, Clone, PartialEq)]
pub struct MultichannelSpectrum {
    data: Vec<Complex64>,
    frames: usize,
    channels: usize,
    config: StftConfig,
}

impl MultichannelSpectrum {
    pub fn zeros(frames: usize, channels: usize, config: StftConfig) -> Self {
        Self {
            data: vec![Complex64::new(0.0, 0.0); frames * config.num_bins() * channels],
            frames,
            channels,
            config,
        }
    }

    pub fn from_signals(signals: &[Vec<f64>], stft: &StftProcessor<f64>) -> Result<Self> {
        if signals.is_empty() {
            return Err(Error::ShapeMismatch("no channels".into()));
        }
        let len = signals[0].len();
        if signals.iter().any(|s| s.len() != len) {
            return Err(Error::ShapeMismatch("channels have different lengths".into()));
        }
        let specs = signals
            .iter()
            .map(|s| stft.stft(s))
            .collect::<Result<Vec<_>>>()?;
        Self::from_channels(&specs)
    }

    pub fn from_channels(specs: &[Spectrogram]) -> Result<Self> {
        let first = specs
            .first()
            .ok_or_else(|| Error::ShapeMismatch("no channels".into()))?;
        let (frames, config) = (first.frames(), *first.config());
        if specs.iter().any(|s| s.frames() != frames || *s.config() != config) {
            return Err(Error::ShapeMismatch("channel spectrograms differ in shape".into()));
        }
        let m = specs.len();
        let f = config.num_bins();
        let mut out = Self::zeros(frames, m, config);
        for (c, spec) in specs.iter().enumerate() {
            for t in 0..frames {
                for (k, &v) in spec.frame(t).iter().enumerate() {
                    out.data[(t * f + k) * m + c] = v;
                }
            }
        }
        Ok(out)
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn bins(&self) -> usize {
        self.config.num_bins()
    }

    pub fn config(&self) -> &StftConfig {
        &self.config
    }

    /// One frame as `[F][M]`.
    pub fn frame(&self, t: usize) -> &[Complex64] {
        let n = self.bins() * self.channels;
        &self.data[t * n..(t + 1) * n]
    }

    pub fn frame_mut(&mut self, t: usize) -> &mut [Complex64] {
        let n = self.bins() * self.channels;
        &mut self.data[t * n..(t + 1) * n]
    }

    pub fn get(&self, t: usize, f: usize, m: usize) -> Complex64 {
        self.data[(t * self.bins() + f) * self.channels + m]
    }

    pub fn channel(&self, m: usize) -> Spectrogram {
        let f = self.bins();
        let data = (0..self.frames * f)
            .map(|i| self.data[i * self.channels + m])
            .collect();
        Spectrogram::from_data(data, self.frames, self.config).expect("consistent shape")
    }
}
