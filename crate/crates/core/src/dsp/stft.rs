//! Framing, short-time Fourier transform and weighted overlap-add synthesis.
//!
//! Analysis applies a periodic Hann window; synthesis applies the same window
//! again and divides by the overlap-added window-square sum, which gives exact
//! reconstruction wherever at least one frame overlaps a sample.

use std::sync::Arc;

use num_complex::Complex;
use rustfft::num_traits::{Float, FromPrimitive};
use rustfft::{Fft, FftNum, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Overlap-add positions whose window-square sum falls below this are zeroed.
pub const OLA_NORM_FLOOR: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Window {
    Hann,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StftConfig {
    pub sample_rate: u32,
    pub frame_size: usize,
    pub fft_size: usize,
    pub hop: usize,
    pub window: Window,
}

impl Default for StftConfig {
    fn default() -> Self {
        Self {
            sample_rate: 16_000,
            frame_size: 256,
            fft_size: 256,
            hop: 128,
            window: Window::Hann,
        }
    }
}

impl StftConfig {
    pub fn validate(&self) -> Result<()> {
        if self.frame_size == 0 || !self.frame_size.is_multiple_of(2) {
            return Err(Error::InvalidConfig(format!(
                "frame size {} must be a positive even number",
                self.frame_size
            )));
        }
        if self.frame_size != self.fft_size {
            return Err(Error::InvalidConfig(format!(
                "frame size {} differs from fft size {}",
                self.frame_size, self.fft_size
            )));
        }
        if self.hop * 2 != self.frame_size {
            return Err(Error::InvalidConfig(format!(
                "hop {} must be half the frame size {}",
                self.hop, self.frame_size
            )));
        }
        if self.sample_rate == 0 {
            return Err(Error::InvalidConfig("sample rate must be positive".into()));
        }
        Ok(())
    }

    /// Number of non-negative frequency bins.
    pub fn num_bins(&self) -> usize {
        self.fft_size / 2 + 1
    }

    /// Frames produced for a signal of `len` samples (no padding).
    pub fn num_frames(&self, len: usize) -> usize {
        if len < self.frame_size {
            0
        } else {
            1 + (len - self.frame_size) / self.hop
        }
    }

    pub fn frame_rate(&self) -> f64 {
        self.sample_rate as f64 / self.hop as f64
    }

    pub fn bin_frequency(&self, bin: usize) -> f64 {
        bin as f64 * self.sample_rate as f64 / self.fft_size as f64
    }

    pub fn window(&self) -> Vec<f64> {
        match self.window {
            Window::Hann => hann_periodic(self.frame_size),
        }
    }
}

pub fn hann_periodic(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos())
        .collect()
}

/// Single-channel complex spectrogram stored frame-major (`T` rows of `F` bins).
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram<T = f64> {
    data: Vec<Complex<T>>,
    frames: usize,
    config: StftConfig,
}

impl<T: FftNum + Float> Spectrogram<T> {
    pub fn zeros(frames: usize, config: StftConfig) -> Self {
        Self {
            data: vec![Complex::new(T::zero(), T::zero()); frames * config.num_bins()],
            frames,
            config,
        }
    }

    pub fn from_data(data: Vec<Complex<T>>, frames: usize, config: StftConfig) -> Result<Self> {
        if data.len() != frames * config.num_bins() {
            return Err(Error::ShapeMismatch(format!(
                "spectrogram data has {} entries, expected {} x {}",
                data.len(),
                frames,
                config.num_bins()
            )));
        }
        Ok(Self {
            data,
            frames,
            config,
        })
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn bins(&self) -> usize {
        self.config.num_bins()
    }

    pub fn config(&self) -> &StftConfig {
        &self.config
    }

    pub fn frame(&self, t: usize) -> &[Complex<T>] {
        let f = self.bins();
        &self.data[t * f..(t + 1) * f]
    }

    pub fn frame_mut(&mut self, t: usize) -> &mut [Complex<T>] {
        let f = self.bins();
        &mut self.data[t * f..(t + 1) * f]
    }

    pub fn data(&self) -> &[Complex<T>] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [Complex<T>] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<Complex<T>> {
        self.data
    }
}

/// Cached FFT plans and window for one [`StftConfig`].
#[derive(Clone)]
pub struct StftProcessor<T: FftNum> {
    config: StftConfig,
    window: Vec<T>,
    forward: Arc<dyn Fft<T>>,
    inverse: Arc<dyn Fft<T>>,
}

impl<T: FftNum> std::fmt::Debug for StftProcessor<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("StftProcessor").field("config", &self.config).finish_non_exhaustive()
    }
}

impl<T: FftNum + Float + FromPrimitive> StftProcessor<T> {
    pub fn new(config: StftConfig) -> Result<Self> {
        config.validate()?;
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(config.fft_size);
        let inverse = planner.plan_fft_inverse(config.fft_size);
        let window = config
            .window()
            .into_iter()
            .map(|w| T::from_f64(w).expect("window value representable"))
            .collect();
        Ok(Self {
            config,
            window,
            forward,
            inverse,
        })
    }

    pub fn config(&self) -> &StftConfig {
        &self.config
    }

    pub fn window(&self) -> &[T] {
        &self.window
    }

    /// Windowed FFT of one `frame_size` block into `out` (`num_bins` entries).
    pub fn analyze_frame(&self, frame: &[T], out: &mut [Complex<T>]) {
        let n = self.config.fft_size;
        debug_assert_eq!(frame.len(), n);
        let mut buf: Vec<Complex<T>> = frame
            .iter()
            .zip(&self.window)
            .map(|(&x, &w)| Complex::new(x * w, T::zero()))
            .collect();
        self.forward.process(&mut buf);
        out.copy_from_slice(&buf[..self.config.num_bins()]);
    }

    /// Inverse real FFT of a half spectrum, multiplied by the synthesis window.
    pub fn synthesize_frame(&self, spectrum: &[Complex<T>], out: &mut [T]) {
        let n = self.config.fft_size;
        let half = self.config.num_bins();
        let mut buf = vec![Complex::new(T::zero(), T::zero()); n];
        buf[..half].copy_from_slice(spectrum);
        // DC and Nyquist of a real signal carry no imaginary part.
        buf[0].im = T::zero();
        buf[half - 1].im = T::zero();
        for k in 1..half - 1 {
            buf[n - k] = spectrum[k].conj();
        }
        self.inverse.process(&mut buf);
        let scale = T::from_usize(n).expect("fft size representable").recip();
        for ((o, b), &w) in out.iter_mut().zip(&buf).zip(&self.window) {
            *o = b.re * scale * w;
        }
    }

    pub fn stft(&self, signal: &[T]) -> Result<Spectrogram<T>> {
        let cfg = &self.config;
        if signal.len() < cfg.frame_size {
            return Err(Error::SignalTooShort {
                len: signal.len(),
                frame: cfg.frame_size,
            });
        }
        let frames = cfg.num_frames(signal.len());
        let mut spec = Spectrogram::zeros(frames, *cfg);
        for t in 0..frames {
            let start = t * cfg.hop;
            self.analyze_frame(&signal[start..start + cfg.frame_size], spec.frame_mut(t));
        }
        Ok(spec)
    }

    pub fn istft(&self, spec: &Spectrogram<T>) -> Result<Vec<T>> {
        let cfg = &self.config;
        if spec.config() != cfg {
            return Err(Error::InvalidConfig(
                "spectrogram was produced with a different STFT configuration".into(),
            ));
        }
        let frames = spec.frames();
        if frames == 0 {
            return Ok(Vec::new());
        }
        let len = (frames - 1) * cfg.hop + cfg.frame_size;
        let mut acc = vec![T::zero(); len];
        let mut norm = vec![T::zero(); len];
        let mut frame = vec![T::zero(); cfg.frame_size];
        for t in 0..frames {
            self.synthesize_frame(spec.frame(t), &mut frame);
            let start = t * cfg.hop;
            for (n, (&x, &w)) in frame.iter().zip(&self.window).enumerate() {
                acc[start + n] = acc[start + n] + x;
                norm[start + n] = norm[start + n] + w * w;
            }
        }
        Ok(normalize_overlap_add(&acc, &norm))
    }

    /// Adjoint of [`Self::stft`]: maps a gradient with respect to the spectrum
    /// (`d/dRe + i d/dIm` per bin) to a gradient with respect to a signal of
    /// `len` samples.
    pub fn stft_adjoint(&self, grad: &Spectrogram<T>, len: usize) -> Vec<T> {
        let cfg = &self.config;
        let n = cfg.fft_size;
        let mut out = vec![T::zero(); len];
        let mut buf = vec![Complex::new(T::zero(), T::zero()); n];
        for t in 0..grad.frames() {
            buf.iter_mut().for_each(|b| *b = Complex::new(T::zero(), T::zero()));
            buf[..cfg.num_bins()].copy_from_slice(grad.frame(t));
            self.inverse.process(&mut buf);
            let start = t * cfg.hop;
            for (j, (b, &w)) in buf.iter().zip(&self.window).enumerate() {
                out[start + j] = out[start + j] + b.re * w;
            }
        }
        out
    }

    /// Adjoint of [`Self::istft`] for a spectrogram of `frames` frames: maps a
    /// gradient with respect to the output samples to `d/dRe + i d/dIm` per bin.
    /// Imaginary parts at DC and Nyquist receive zero gradient.
    pub fn istft_adjoint(&self, grad: &[T], frames: usize) -> Spectrogram<T> {
        let cfg = &self.config;
        let n = cfg.fft_size;
        let half = cfg.num_bins();
        let mut spec = Spectrogram::zeros(frames, *cfg);
        if frames == 0 {
            return spec;
        }
        let len = (frames - 1) * cfg.hop + cfg.frame_size;
        let mut norm = vec![T::zero(); len];
        for t in 0..frames {
            for (j, &w) in self.window.iter().enumerate() {
                norm[t * cfg.hop + j] = norm[t * cfg.hop + j] + w * w;
            }
        }
        let floor = T::from_f64(OLA_NORM_FLOOR).unwrap();
        let inv_n = T::from_usize(n).unwrap().recip();
        let two = T::from_f64(2.0).unwrap();
        let mut buf = vec![Complex::new(T::zero(), T::zero()); n];
        for t in 0..frames {
            let start = t * cfg.hop;
            for (j, b) in buf.iter_mut().enumerate() {
                let i = start + j;
                let q = if norm[i] > floor { grad[i] * self.window[j] / norm[i] } else { T::zero() };
                *b = Complex::new(q, T::zero());
            }
            self.forward.process(&mut buf);
            let frame = spec.frame_mut(t);
            for k in 0..half {
                let edge = k == 0 || k == half - 1;
                let c = if edge { inv_n } else { two * inv_n };
                let im = if edge { T::zero() } else { buf[k].im * c };
                frame[k] = Complex::new(buf[k].re * c, im);
            }
        }
        spec
    }
}

pub(crate) fn normalize_overlap_add<T: Float + FromPrimitive>(acc: &[T], norm: &[T]) -> Vec<T> {
    let floor = T::from_f64(OLA_NORM_FLOOR).unwrap();
    acc.iter()
        .zip(norm)
        .map(|(&a, &w)| if w > floor { a / w } else { T::zero() })
        .collect()
}

/// Zero-pads `hop` samples in front and at least `hop` at the back (rounded up
/// to a whole hop), so every input sample is covered by two frames exactly as
/// in block-wise streaming. Sample `i` of the input sits at `hop + i`.
pub fn pad_signal(signal: &[f64], config: &StftConfig) -> Vec<f64> {
    let hop = config.hop;
    let tail = hop + (hop - signal.len() % hop) % hop;
    let mut out = vec![0.0; hop + signal.len() + tail];
    out[hop..hop + signal.len()].copy_from_slice(signal);
    out
}

pub fn stft(signal: &[f64], config: &StftConfig) -> Result<Spectrogram> {
    StftProcessor::new(*config)?.stft(signal)
}

pub fn istft(spec: &Spectrogram, config: &StftConfig) -> Result<Vec<f64>> {
    StftProcessor::new(*config)?.istft(spec)
}
