//! 64-band ERB filterbank with triangular bands on the ERB-rate scale.
//!
//! Band weights form a partition of unity over frequency bins, so expanding a
//! band gain back to bins is a per-bin convex combination of at most two bands.

use num_complex::Complex64;

use super::stft::{Spectrogram, StftConfig};
use crate::error::{Error, Result};

pub const DEFAULT_BANDS: usize = 64;
/// Added to band energies before the log so silent frames stay finite.
pub const LOG_FLOOR: f64 = 1e-10;

/// ERB-rate (Glasberg & Moore) of a frequency in Hz.
pub fn hz_to_erb_rate(hz: f64) -> f64 {
    21.4 * (1.0 + 0.00437 * hz).log10()
}

pub fn erb_rate_to_hz(erb: f64) -> f64 {
    (10f64.powf(erb / 21.4) - 1.0) / 0.00437
}

#[derive(Debug, Clone, PartialEq)]
pub struct ErbFilterbank {
    num_bands: usize,
    num_bins: usize,
    centers_hz: Vec<f64>,
    /// `[band][bin]`
    band_weights: Vec<f64>,
    /// `[bin][band]`
    pseudo_inverse: Vec<f64>,
}

impl ErbFilterbank {
    pub fn new(config: &StftConfig, num_bands: usize) -> Result<Self> {
        config.validate()?;
        let num_bins = config.num_bins();
        if num_bands < 2 || num_bands > num_bins {
            return Err(Error::InvalidConfig(format!(
                "{num_bands} ERB bands cannot be placed on {num_bins} bins"
            )));
        }
        let nyquist = config.sample_rate as f64 / 2.0;
        let bin_hz = config.bin_frequency(1);

        // Uniform on the ERB-rate scale, except that adjacent centers are never
        // closer than one bin; otherwise low bands would cover no bin at all.
        let mut centers = Vec::with_capacity(num_bands);
        centers.push(0.0);
        let top = hz_to_erb_rate(nyquist);
        for b in 1..num_bands {
            let prev = centers[b - 1];
            let step = (top - hz_to_erb_rate(prev)) / (num_bands - b) as f64;
            let c = if b == num_bands - 1 {
                nyquist
            } else {
                erb_rate_to_hz(hz_to_erb_rate(prev) + step).max(prev + bin_hz)
            };
            centers.push(c);
        }
        if centers.windows(2).any(|w| w[1] <= w[0]) || centers[num_bands - 1] != nyquist {
            return Err(Error::InvalidConfig(
                "ERB band centers are not strictly increasing up to Nyquist".into(),
            ));
        }
        let center_erb: Vec<f64> = centers.iter().map(|&c| hz_to_erb_rate(c)).collect();

        let mut band_weights = vec![0.0; num_bands * num_bins];
        for bin in 0..num_bins {
            let e = hz_to_erb_rate(config.bin_frequency(bin));
            let j = match center_erb.iter().position(|&c| c >= e) {
                Some(0) => {
                    band_weights[bin] = 1.0;
                    continue;
                }
                Some(j) => j,
                None => num_bands - 1,
            };
            let (lo, hi) = (center_erb[j - 1], center_erb[j]);
            let upper = ((e - lo) / (hi - lo)).clamp(0.0, 1.0);
            band_weights[(j - 1) * num_bins + bin] = 1.0 - upper;
            band_weights[j * num_bins + bin] = upper;
        }

        let mut pseudo_inverse = vec![0.0; num_bins * num_bands];
        for bin in 0..num_bins {
            let total: f64 = (0..num_bands).map(|b| band_weights[b * num_bins + bin]).sum();
            for b in 0..num_bands {
                pseudo_inverse[bin * num_bands + b] = band_weights[b * num_bins + bin] / total;
            }
        }

        Ok(Self {
            num_bands,
            num_bins,
            centers_hz: centers,
            band_weights,
            pseudo_inverse,
        })
    }

    pub fn num_bands(&self) -> usize {
        self.num_bands
    }

    pub fn num_bins(&self) -> usize {
        self.num_bins
    }

    pub fn centers_hz(&self) -> &[f64] {
        &self.centers_hz
    }

    pub fn band_weight(&self, band: usize, bin: usize) -> f64 {
        self.band_weights[band * self.num_bins + bin]
    }

    pub fn pseudo_inverse_weight(&self, bin: usize, band: usize) -> f64 {
        self.pseudo_inverse[bin * self.num_bands + band]
    }

    /// Log band energies of one frame into `out` (`num_bands` entries).
    pub fn analyze_frame(&self, frame: &[Complex64], out: &mut [f64]) {
        debug_assert_eq!(frame.len(), self.num_bins);
        for (b, o) in out.iter_mut().enumerate() {
            let row = &self.band_weights[b * self.num_bins..(b + 1) * self.num_bins];
            let energy: f64 = row.iter().zip(frame).map(|(w, x)| w * x.norm_sqr()).sum();
            *o = (energy + LOG_FLOOR).ln();
        }
    }

    /// Expand one frame of band gains to a per-bin mask clamped to `[0, 1]`.
    pub fn expand_frame(&self, gain: &[f64], mask: &mut [f64]) {
        debug_assert_eq!(gain.len(), self.num_bands);
        for (f, m) in mask.iter_mut().enumerate() {
            let row = &self.pseudo_inverse[f * self.num_bands..(f + 1) * self.num_bands];
            let v: f64 = row.iter().zip(gain).map(|(p, g)| p * g).sum();
            *m = v.clamp(0.0, 1.0);
        }
    }

    /// Transposed expansion: accumulate a per-bin gradient back onto bands.
    /// The clamp is treated as identity inside `[0, 1]` and flat outside.
    pub fn expand_frame_backward(&self, gain: &[f64], grad_mask: &[f64], grad_gain: &mut [f64]) {
        for (f, &gm) in grad_mask.iter().enumerate() {
            let row = &self.pseudo_inverse[f * self.num_bands..(f + 1) * self.num_bands];
            let v: f64 = row.iter().zip(gain).map(|(p, g)| p * g).sum();
            if !(0.0..=1.0).contains(&v) {
                continue;
            }
            for (gg, p) in grad_gain.iter_mut().zip(row) {
                *gg += p * gm;
            }
        }
    }
}

/// `out[t][b] = ln(sum_f W[b][f] |X[t][f]|^2 + 1e-10)`, flattened `T x B`.
pub fn erb_analyze(spec: &Spectrogram, fb: &ErbFilterbank) -> Result<Vec<f64>> {
    if spec.bins() != fb.num_bins() {
        return Err(Error::ShapeMismatch(format!(
            "spectrogram has {} bins, filterbank expects {}",
            spec.bins(),
            fb.num_bins()
        )));
    }
    let b = fb.num_bands();
    let mut out = vec![0.0; spec.frames() * b];
    for t in 0..spec.frames() {
        fb.analyze_frame(spec.frame(t), &mut out[t * b..(t + 1) * b]);
    }
    Ok(out)
}

/// Band gains (`T x B`, flattened) to a per-bin magnitude mask (`T x F`).
pub fn erb_gain_to_mask(gain: &[f64], fb: &ErbFilterbank) -> Result<Vec<f64>> {
    let b = fb.num_bands();
    if !gain.len().is_multiple_of(b) {
        return Err(Error::ShapeMismatch(format!(
            "gain of length {} is not a multiple of {b} bands",
            gain.len()
        )));
    }
    let frames = gain.len() / b;
    let f = fb.num_bins();
    let mut mask = vec![0.0; frames * f];
    for t in 0..frames {
        fb.expand_frame(&gain[t * b..(t + 1) * b], &mut mask[t * f..(t + 1) * f]);
    }
    Ok(mask)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn fb() -> ErbFilterbank {
        ErbFilterbank::new(&StftConfig::default(), DEFAULT_BANDS).unwrap()
    }

    #[test]
    fn every_bin_is_covered_and_every_band_has_support() {
        let fb = fb();
        for f in 0..fb.num_bins() {
            let total: f64 = (0..64).map(|b| fb.band_weight(b, f)).sum();
            assert!(total > 0.0);
            assert!((total - 1.0).abs() < 1e-12);
        }
        for b in 0..64 {
            assert!((0..fb.num_bins()).any(|f| fb.band_weight(b, f) > 0.0), "band {b} empty");
        }
    }

    #[test]
    fn centers_increase_from_zero_to_nyquist() {
        let fb = fb();
        let c = fb.centers_hz();
        assert_eq!(c[0], 0.0);
        assert_eq!(c[63], 8000.0);
        assert!(c.windows(2).all(|w| hz_to_erb_rate(w[1]) > hz_to_erb_rate(w[0])));
    }

    #[test]
    fn all_ones_gain_is_identity() {
        let fb = fb();
        let mask = erb_gain_to_mask(&vec![1.0; 3 * 64], &fb).unwrap();
        assert!(mask.iter().all(|m| (m - 1.0).abs() <= 1e-6));
        let mask = erb_gain_to_mask(&vec![0.0; 64], &fb).unwrap();
        assert!(mask.iter().all(|&m| m == 0.0));
    }

    #[test]
    fn single_band_gain_stays_on_band_support() {
        let fb = fb();
        for band in [0, 5, 31, 63] {
            let mut g = vec![0.0; 64];
            g[band] = 1.0;
            let mask = erb_gain_to_mask(&g, &fb).unwrap();
            for f in 0..fb.num_bins() {
                if fb.band_weight(band, f) == 0.0 {
                    assert_eq!(mask[f], 0.0);
                } else {
                    assert!(mask[f] > 0.0);
                }
            }
        }
    }

    #[test]
    fn analysis_of_zero_and_unit_spectra() {
        let fb = fb();
        let cfg = StftConfig::default();
        let zero = Spectrogram::zeros(2, cfg);
        let out = erb_analyze(&zero, &fb).unwrap();
        assert!(out.iter().all(|&v| v == LOG_FLOOR.ln()));

        let ones =
            Spectrogram::from_data(vec![Complex64::new(0.6, 0.8); 129], 1, cfg).unwrap();
        let out = erb_analyze(&ones, &fb).unwrap();
        for b in 0..64 {
            let s: f64 = (0..129).map(|f| fb.band_weight(b, f)).sum();
            assert!((out[b] - (s + LOG_FLOOR).ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn doubling_magnitude_adds_log_four() {
        let fb = fb();
        let cfg = StftConfig::default();
        let data: Vec<Complex64> =
            (0..129).map(|f| Complex64::new(1.0 + f as f64, -0.5 * f as f64)).collect();
        let a = erb_analyze(&Spectrogram::from_data(data.clone(), 1, cfg).unwrap(), &fb).unwrap();
        let doubled: Vec<Complex64> = data.iter().map(|c| c * 2.0).collect();
        let b = erb_analyze(&Spectrogram::from_data(doubled, 1, cfg).unwrap(), &fb).unwrap();
        for (x, y) in a.iter().zip(&b) {
            // the 1e-10 floor is negligible against these energies
            assert!((y - x - 4f64.ln()).abs() < 1e-9);
        }
    }

    proptest! {
        #[test]
        fn expansion_is_monotone(g in prop::collection::vec(0.0f64..1.0, 64),
                                 bump in prop::collection::vec(0.0f64..0.5, 64)) {
            let fb = fb();
            let lo = erb_gain_to_mask(&g, &fb).unwrap();
            let hi_g: Vec<f64> = g.iter().zip(&bump).map(|(a, b)| (a + b).min(1.0)).collect();
            let hi = erb_gain_to_mask(&hi_g, &fb).unwrap();
            for (a, b) in lo.iter().zip(&hi) {
                prop_assert!(b >= a);
            }
        }
    }
}
