//! Source material for scene rendering: WAV folders or a built-in synthetic
//! generator of speech-like and noise-like signals.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dsp::wav::{read_wav, PIPELINE_SAMPLE_RATE};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClipKind {
    Speech,
    Noise,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum ClipSource {
    /// Generated on demand from a seed.
    Synthetic { kind: ClipKind, seed: u64 },
    File { path: PathBuf },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Catalog {
    pub speech: Vec<ClipSource>,
    pub noise: Vec<ClipSource>,
}

impl Catalog {
    pub fn synthetic(num_speech: usize, num_noise: usize, seed: u64) -> Self {
        let mk = |kind, n: usize, salt: u64| {
            (0..n as u64)
                .map(|i| ClipSource::Synthetic {
                    kind,
                    seed: seed
                        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
                        .wrapping_add(salt)
                        .wrapping_add(i.wrapping_mul(0xBF58_476D_1CE4_E5B9)),
                })
                .collect()
        };
        Self {
            speech: mk(ClipKind::Speech, num_speech, 1),
            noise: mk(ClipKind::Noise, num_noise, 2),
        }
    }

    /// Every `*.wav` file (sorted) under the two folders.
    pub fn from_folders(speech_dir: impl AsRef<Path>, noise_dir: impl AsRef<Path>) -> Result<Self> {
        let catalog = Self {
            speech: wav_files(speech_dir.as_ref())?,
            noise: wav_files(noise_dir.as_ref())?,
        };
        catalog.require_nonempty()?;
        Ok(catalog)
    }

    pub fn require_nonempty(&self) -> Result<()> {
        if self.speech.is_empty() || self.noise.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        Ok(())
    }

    pub fn list(&self, kind: ClipKind) -> &[ClipSource] {
        match kind {
            ClipKind::Speech => &self.speech,
            ClipKind::Noise => &self.noise,
        }
    }

    /// `len` samples of clip `index` starting at `offset`, looping the
    /// material when it is shorter than requested.
    pub fn clip(&self, kind: ClipKind, index: usize, offset: usize, len: usize) -> Result<Vec<f64>> {
        let src = self
            .list(kind)
            .get(index)
            .ok_or_else(|| Error::Scene(format!("{kind:?} clip {index} not in catalog")))?;
        let base = match src {
            ClipSource::Synthetic { kind, seed } => {
                return Ok(match kind {
                    ClipKind::Speech => synth_speech(*seed, offset, len),
                    ClipKind::Noise => synth_noise(*seed, offset, len),
                })
            }
            ClipSource::File { path } => load_mono(path)?,
        };
        if base.iter().all(|&v| v == 0.0) {
            return Err(Error::Scene(format!("{src:?} has zero energy")));
        }
        Ok((0..len).map(|i| base[(offset + i) % base.len()]).collect())
    }

    /// Native length of a clip in samples, `None` for unbounded synthetic
    /// material.
    pub fn clip_len(&self, kind: ClipKind, index: usize) -> Result<Option<usize>> {
        match self.list(kind).get(index) {
            Some(ClipSource::Synthetic { .. }) => Ok(None),
            Some(ClipSource::File { path }) => {
                let reader = hound::WavReader::open(path)?;
                Ok(Some(reader.duration() as usize))
            }
            None => Err(Error::Scene(format!("{kind:?} clip {index} not in catalog"))),
        }
    }
}

fn wav_files(dir: &Path) -> Result<Vec<ClipSource>> {
    let entries = std::fs::read_dir(dir).map_err(|source| Error::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("wav")))
        .collect();
    paths.sort();
    Ok(paths.into_iter().map(|path| ClipSource::File { path }).collect())
}

fn load_mono(path: &Path) -> Result<Vec<f64>> {
    let audio = read_wav(path)?;
    audio.require_rate(PIPELINE_SAMPLE_RATE)?;
    if audio.is_empty() {
        return Err(Error::Scene(format!("{} is empty", path.display())));
    }
    let n = audio.num_channels() as f64;
    Ok((0..audio.len())
        .map(|i| audio.channels.iter().map(|c| c[i]).sum::<f64>() / n)
        .collect())
}

const FS: f64 = PIPELINE_SAMPLE_RATE as f64;

/// Voiced harmonic series with a gliding pitch, two formant-like spectral
/// peaks, and syllable-rate on/off amplitude modulation.
pub fn synth_speech(seed: u64, offset: usize, len: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let f0 = rng.gen_range(90.0..240.0);
    let vibrato_rate = rng.gen_range(0.5..2.0);
    let vibrato_depth = rng.gen_range(0.05..0.15);
    let syllable_rate = rng.gen_range(3.0..6.0);
    let pause_rate = rng.gen_range(0.2..0.5);
    let formants = [rng.gen_range(400.0..900.0), rng.gen_range(1100.0..2500.0)];
    let phase0: f64 = rng.gen_range(0.0..2.0 * PI);
    let am_phase: f64 = rng.gen_range(0.0..2.0 * PI);
    let n_harm = (4000.0 / f0) as usize;
    let amps: Vec<f64> = (1..=n_harm)
        .map(|k| {
            let f = k as f64 * f0;
            let peak = formants
                .iter()
                .map(|&fc| (-((f - fc) / 250.0).powi(2)).exp())
                .sum::<f64>();
            (0.15 + peak) / k as f64
        })
        .collect();
    let mut out = Vec::with_capacity(len);
    for i in offset..offset + len {
        let t = i as f64 / FS;
        // Closed-form phase integral of f0 * (1 + d sin(2 pi v t)).
        let phase = 2.0 * PI * f0 * t
            + f0 * vibrato_depth / vibrato_rate * (1.0 - (2.0 * PI * vibrato_rate * t).cos())
            + phase0;
        let mut s = 0.0;
        for (k, a) in amps.iter().enumerate() {
            s += a * ((k + 1) as f64 * phase).sin();
        }
        let syllable = (0.5 - 0.5 * (2.0 * PI * syllable_rate * t + am_phase).cos()).powi(2);
        let gate = if (2.0 * PI * pause_rate * t + am_phase).sin() > -0.6 { 1.0 } else { 0.05 };
        out.push(0.1 * s * syllable * gate);
    }
    out
}

/// Colored noise: white noise through a random one-pole lowpass with a slow
/// amplitude drift. Samples depend only on `(seed, absolute index)`.
pub fn synth_noise(seed: u64, offset: usize, len: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pole: f64 = rng.gen_range(0.0..0.95);
    let drift_rate = rng.gen_range(0.1..1.0);
    let drift_depth = rng.gen_range(0.0..0.5);
    let drift_phase: f64 = rng.gen_range(0.0..2.0 * PI);
    let mut stream = ChaCha8Rng::seed_from_u64(seed ^ 0x5EED_F00D);
    let mut state = 0.0;
    let mut out = Vec::with_capacity(len);
    let gain = 0.05 * (1.0 - pole * pole).sqrt();
    for i in 0..offset + len {
        let w: f64 = stream.gen_range(-1.0..1.0) * 3f64.sqrt();
        state = pole * state + w;
        if i >= offset {
            let t = i as f64 / FS;
            let env = 1.0 + drift_depth * (2.0 * PI * drift_rate * t + drift_phase).sin();
            out.push(gain * state * env);
        }
    }
    out
}
