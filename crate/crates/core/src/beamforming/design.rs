//! Fixed maxDI (diffuse-noise MVDR) and two-constraint LCMV beamformers.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use super::geometry::{direction, ArrayGeometry, BlockGrid, Microphone};
use crate::container::Container;
use crate::dsp::{MultichannelSpectrum, Spectrogram, StftConfig};
use crate::error::{Error, Result};

/// Diagonal loading relative to `trace(Gamma) / M`.
pub const DEFAULT_LOADING: f64 = 1e-3;
/// Largest accepted condition number of the LCMV constraint Gram matrix.
pub const LCMV_MAX_CONDITION: f64 = 1e8;

/// Far-field steering vector toward azimuth/elevation, referenced to the
/// reference microphone (its entry is exactly 1).
pub fn steering_vector(
    geometry: &ArrayGeometry,
    azimuth_deg: f64,
    elevation_deg: f64,
    freq_hz: f64,
) -> Vec<Complex64> {
    let u = direction(azimuth_deg, elevation_deg);
    let delay = |p: [f64; 3]| -(u[0] * p[0] + u[1] * p[1] + u[2] * p[2]) / geometry.speed_of_sound;
    let tau_ref = delay(geometry.position(geometry.reference_channel));
    (0..geometry.num_mics())
        .map(|m| {
            let tau = delay(geometry.position(m)) - tau_ref;
            Complex64::from_polar(1.0, -2.0 * std::f64::consts::PI * freq_hz * tau)
        })
        .collect()
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        x.sin() / x
    }
}

/// Spherically isotropic diffuse-field coherence `sinc(2 pi f d_ij / c)`.
pub fn diffuse_coherence(geometry: &ArrayGeometry, freq_hz: f64) -> DMatrix<Complex64> {
    let m = geometry.num_mics();
    let k = 2.0 * std::f64::consts::PI * freq_hz / geometry.speed_of_sound;
    DMatrix::from_fn(m, m, |i, j| {
        if i == j {
            Complex64::new(1.0, 0.0)
        } else {
            Complex64::new(sinc(k * geometry.distance(i, j)), 0.0)
        }
    })
}

fn loaded_coherence(geometry: &ArrayGeometry, freq_hz: f64, loading: f64) -> DMatrix<Complex64> {
    let mut gamma = diffuse_coherence(geometry, freq_hz);
    let m = geometry.num_mics();
    let lambda = loading * gamma.trace().re / m as f64;
    for i in 0..m {
        gamma[(i, i)] += lambda;
    }
    gamma
}

/// `w = R^{-1} d / (d^H R^{-1} d)`; `None` if `R` is singular.
pub fn mvdr_weights(r: &DMatrix<Complex64>, d: &[Complex64]) -> Option<Vec<Complex64>> {
    let dv = DVector::from_column_slice(d);
    let rd = r.clone().lu().solve(&dv)?;
    let denom = dv.dotc(&rd);
    if !denom.norm().is_finite() || denom.norm() < 1e-300 {
        return None;
    }
    Some(rd.iter().map(|v| v / denom).collect())
}

/// maxDI weights toward one azimuth (elevation 0) at one frequency.
pub fn maxdi_weights(
    geometry: &ArrayGeometry,
    azimuth_deg: f64,
    freq_hz: f64,
    loading: f64,
) -> Option<Vec<Complex64>> {
    let r = loaded_coherence(geometry, freq_hz, loading);
    mvdr_weights(&r, &steering_vector(geometry, azimuth_deg, 0.0, freq_hz))
}

/// `w^H x` for weight and data vectors of equal length.
pub fn beamform(w: &[Complex64], x: &[Complex64]) -> Complex64 {
    w.iter().zip(x).map(|(w, x)| w.conj() * x).sum()
}

/// Per-block, per-bin maxDI weights `[K][F][M]`.
#[derive(Debug, Clone, PartialEq)]
pub struct BeamformerBank {
    weights: Vec<Complex64>,
    geometry: ArrayGeometry,
    grid: BlockGrid,
    config: StftConfig,
    diagonal_loading: f64,
}

pub fn design_maxdi(
    geometry: &ArrayGeometry,
    grid: &BlockGrid,
    config: &StftConfig,
    loading: f64,
) -> Result<BeamformerBank> {
    geometry.validate()?;
    if !(loading > 0.0) {
        return Err(Error::InvalidConfig("diagonal loading must be positive".into()));
    }
    let (k_count, f_count, m) = (grid.num_blocks, config.num_bins(), geometry.num_mics());
    let mut weights = Vec::with_capacity(k_count * f_count * m);
    for k in 0..k_count {
        let theta = grid.center(k);
        for f in 0..f_count {
            let w = maxdi_weights(geometry, theta, config.bin_frequency(f), loading)
                .ok_or(Error::SingularBeamformer { block: k, bin: f })?;
            weights.extend(w);
        }
    }
    Ok(BeamformerBank {
        weights,
        geometry: geometry.clone(),
        grid: *grid,
        config: *config,
        diagonal_loading: loading,
    })
}

/// LCMV weights `[F][M]` with unit response toward both look directions.
///
/// Where both steering vectors coincide (the DC bin, or a front/back
/// ambiguity of a linear array) the constraints are identical and the
/// single-constraint MVDR solution satisfies both.
pub fn design_lcmv(
    geometry: &ArrayGeometry,
    doa1_deg: f64,
    doa2_deg: f64,
    config: &StftConfig,
    loading: f64,
) -> Result<Vec<Vec<Complex64>>> {
    geometry.validate()?;
    if (doa1_deg - doa2_deg).rem_euclid(360.0) == 0.0 {
        return Err(Error::InvalidConfig("LCMV look directions must differ".into()));
    }
    let m = geometry.num_mics();
    let mut out = Vec::with_capacity(config.num_bins());
    for bin in 0..config.num_bins() {
        let freq = config.bin_frequency(bin);
        let r = loaded_coherence(geometry, freq, loading);
        let d1 = steering_vector(geometry, doa1_deg, 0.0, freq);
        let d2 = steering_vector(geometry, doa2_deg, 0.0, freq);
        let gap: f64 = d1.iter().zip(&d2).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>().sqrt();
        if gap < 1e-12 {
            out.push(mvdr_weights(&r, &d1).ok_or(Error::IllConditioned {
                bin,
                cond: f64::INFINITY,
            })?);
            continue;
        }
        let c = DMatrix::from_fn(m, 2, |i, j| if j == 0 { d1[i] } else { d2[i] });
        let lu = r.lu();
        let rc = lu.solve(&c).ok_or(Error::IllConditioned {
            bin,
            cond: f64::INFINITY,
        })?;
        let gram = c.adjoint() * &rc;
        let cond = hermitian_2x2_condition(&gram);
        if !(cond <= LCMV_MAX_CONDITION) {
            return Err(Error::IllConditioned { bin, cond });
        }
        let ones = DVector::from_element(2, Complex64::new(1.0, 0.0));
        let coef = gram
            .lu()
            .solve(&ones)
            .ok_or(Error::IllConditioned { bin, cond })?;
        let w = rc * coef;
        out.push(w.iter().copied().collect());
    }
    Ok(out)
}

fn hermitian_2x2_condition(g: &DMatrix<Complex64>) -> f64 {
    let (a, d) = (g[(0, 0)].re, g[(1, 1)].re);
    let b = g[(0, 1)].norm();
    let mean = 0.5 * (a + d);
    let disc = (0.25 * (a - d).powi(2) + b * b).sqrt();
    let (hi, lo) = (mean + disc, mean - disc);
    if lo <= 0.0 {
        f64::INFINITY
    } else {
        hi / lo
    }
}

impl BeamformerBank {
    pub fn num_blocks(&self) -> usize {
        self.grid.num_blocks
    }

    pub fn num_bins(&self) -> usize {
        self.config.num_bins()
    }

    pub fn num_mics(&self) -> usize {
        self.geometry.num_mics()
    }

    pub fn geometry(&self) -> &ArrayGeometry {
        &self.geometry
    }

    pub fn grid(&self) -> &BlockGrid {
        &self.grid
    }

    pub fn config(&self) -> &StftConfig {
        &self.config
    }

    pub fn diagonal_loading(&self) -> f64 {
        self.diagonal_loading
    }

    pub fn weights(&self, block: usize, bin: usize) -> &[Complex64] {
        let m = self.num_mics();
        let start = (block * self.num_bins() + bin) * m;
        &self.weights[start..start + m]
    }

    /// Largest `|w^H d - 1|` over every block centre and bin.
    pub fn max_distortion_error(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for k in 0..self.num_blocks() {
            for f in 0..self.num_bins() {
                let d = steering_vector(&self.geometry, self.grid.center(k), 0.0, self.config.bin_frequency(f));
                worst = worst.max((beamform(self.weights(k, f), &d) - 1.0).norm());
            }
        }
        worst
    }

    /// Beamform one `[F][M]` frame toward `block` into `out` (`F` bins).
    pub fn apply_frame(&self, block: usize, frame: &[Complex64], out: &mut [Complex64]) {
        let m = self.num_mics();
        for (f, o) in out.iter_mut().enumerate() {
            *o = beamform(self.weights(block, f), &frame[f * m..(f + 1) * m]);
        }
    }

    /// `b_k(t, f) = w_k(f)^H X(t, f)` for every block.
    pub fn apply(&self, x: &MultichannelSpectrum) -> Result<Vec<Spectrogram>> {
        if x.channels() != self.num_mics() || x.bins() != self.num_bins() {
            return Err(Error::ShapeMismatch(format!(
                "spectrum is {} channels x {} bins, bank expects {} x {}",
                x.channels(),
                x.bins(),
                self.num_mics(),
                self.num_bins()
            )));
        }
        let mut out = Vec::with_capacity(self.num_blocks());
        for k in 0..self.num_blocks() {
            let mut spec = Spectrogram::zeros(x.frames(), *x.config());
            for t in 0..x.frames() {
                self.apply_frame(k, x.frame(t), spec.frame_mut(t));
            }
            out.push(spec);
        }
        Ok(out)
    }

    pub fn to_container(&self) -> Container {
        let (k, f, m) = (self.num_blocks(), self.num_bins(), self.num_mics());
        let mut c = Container::new();
        c.meta.insert("kind".into(), "beamformer_bank".into());
        c.meta.insert("reference_channel".into(), self.geometry.reference_channel.to_string());
        c.meta.insert("speed_of_sound".into(), self.geometry.speed_of_sound.to_string());
        c.meta.insert("diagonal_loading".into(), self.diagonal_loading.to_string());
        c.meta.insert("sample_rate".into(), self.config.sample_rate.to_string());
        c.meta.insert("fft_size".into(), self.config.fft_size.to_string());
        let re: Vec<f64> = self.weights.iter().map(|w| w.re).collect();
        let im: Vec<f64> = self.weights.iter().map(|w| w.im).collect();
        c.push_f64("bank.weights_re", &[k, f, m], &re);
        c.push_f64("bank.weights_im", &[k, f, m], &im);
        let pos: Vec<f64> = self.geometry.mics.iter().flat_map(|m| m.position).collect();
        c.push_f64("bank.mic_positions", &[m, 3], &pos);
        c
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        if c.meta("kind")? != "beamformer_bank" {
            return Err(Error::Container("not a beamformer bank".into()));
        }
        let parse = |key: &str| -> Result<f64> {
            c.meta(key)?
                .parse::<f64>()
                .map_err(|e| Error::Container(format!("{key}: {e}")))
        };
        let pos = c
            .get("bank.mic_positions")
            .ok_or_else(|| Error::Container("missing microphone positions".into()))?;
        let m = pos.shape[0];
        let pos = pos.data.to_f64();
        let geometry = ArrayGeometry {
            mics: (0..m)
                .map(|i| Microphone {
                    name: format!("mic{i}"),
                    position: [pos[3 * i], pos[3 * i + 1], pos[3 * i + 2]],
                })
                .collect(),
            reference_channel: parse("reference_channel")? as usize,
            speed_of_sound: parse("speed_of_sound")?,
        };
        geometry.validate()?;
        let config = StftConfig {
            sample_rate: parse("sample_rate")? as u32,
            fft_size: parse("fft_size")? as usize,
            frame_size: parse("fft_size")? as usize,
            hop: parse("fft_size")? as usize / 2,
            ..StftConfig::default()
        };
        config.validate()?;
        let re_t = c
            .get("bank.weights_re")
            .ok_or_else(|| Error::Container("missing bank weights".into()))?;
        let k = re_t.shape[0];
        let shape = [k, config.num_bins(), m];
        let re = c.expect("bank.weights_re", &shape)?.data.to_f64();
        let im = c.expect("bank.weights_im", &shape)?.data.to_f64();
        Ok(Self {
            weights: re.iter().zip(&im).map(|(&a, &b)| Complex64::new(a, b)).collect(),
            geometry,
            grid: BlockGrid::new(k)?,
            config,
            diagonal_loading: parse("diagonal_loading")?,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_container().save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_container(&Container::load(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_mics_x(spacing: f64) -> ArrayGeometry {
        ArrayGeometry::new(vec![[0.0, 0.0, 0.0], [spacing, 0.0, 0.0]], 0).unwrap()
    }

    #[test]
    fn single_mic_steering_is_unity() {
        let g = ArrayGeometry::new(vec![[0.0; 3]], 0).unwrap();
        for (az, f) in [(0.0, 100.0), (73.0, 4000.0), (-170.0, 7999.0)] {
            assert_eq!(steering_vector(&g, az, 10.0, f), vec![Complex64::new(1.0, 0.0)]);
        }
    }

    #[test]
    fn broadside_has_equal_phases() {
        let g = ArrayGeometry::new(vec![[0.0, -0.05, 0.0], [0.0, 0.05, 0.0]], 0).unwrap();
        let d = steering_vector(&g, 0.0, 0.0, 3000.0);
        assert!((d[0] - d[1]).norm() < 1e-12);
    }

    #[test]
    fn endfire_phase_matches_hand_computation() {
        let g = two_mics_x(0.1);
        let d = steering_vector(&g, 0.0, 0.0, 1000.0);
        let expected = 2.0 * std::f64::consts::PI * 1000.0 * 0.1 / 343.0;
        assert!((expected - 1.832).abs() < 1e-3);
        // mic 1 sits closer to the source, so it leads the reference
        assert!((d[1].arg() - expected).abs() < 1e-12);
    }

    #[test]
    fn coherence_values() {
        let g = two_mics_x(0.05);
        let gamma = diffuse_coherence(&g, 3430.0);
        assert_eq!(gamma[(0, 0)], Complex64::new(1.0, 0.0));
        assert!(gamma[(0, 1)].norm() < 1e-12);
        let dc = diffuse_coherence(&ArrayGeometry::glasses_default(), 0.0);
        assert!(dc.iter().all(|v| (v - Complex64::new(1.0, 0.0)).norm() < 1e-12));
        let gamma = diffuse_coherence(&ArrayGeometry::glasses_default(), 2100.0);
        assert_eq!(gamma, gamma.adjoint());
    }

    #[test]
    fn single_mic_bank_is_identity() {
        let g = ArrayGeometry::new(vec![[0.0; 3]], 0).unwrap();
        let cfg = StftConfig::default();
        let bank = design_maxdi(&g, &BlockGrid::default(), &cfg, DEFAULT_LOADING).unwrap();
        for k in 0..20 {
            for f in 0..129 {
                assert!((bank.weights(k, f)[0] - Complex64::new(1.0, 0.0)).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn default_bank_is_distortionless() {
        let g = ArrayGeometry::glasses_default();
        let cfg = StftConfig::default();
        let grid = BlockGrid::default();
        let bank = design_maxdi(&g, &grid, &cfg, DEFAULT_LOADING).unwrap();
        for k in 0..20 {
            for f in 0..129 {
                let d = steering_vector(&g, grid.center(k), 0.0, cfg.bin_frequency(f));
                let resp = beamform(bank.weights(k, f), &d);
                assert!((resp - 1.0).norm() <= 1e-6, "block {k} bin {f}: {resp}");
            }
        }
    }

    #[test]
    fn zero_loading_is_rejected() {
        let g = ArrayGeometry::glasses_default();
        assert!(design_maxdi(&g, &BlockGrid::default(), &StftConfig::default(), 0.0).is_err());
    }

    #[test]
    fn lcmv_meets_both_constraints() {
        let g = ArrayGeometry::glasses_default();
        let cfg = StftConfig::default();
        for (a, b) in [(-30.0, 40.0), (10.0, 190.0)] {
            let w = design_lcmv(&g, a, b, &cfg, DEFAULT_LOADING).unwrap();
            for (f, wf) in w.iter().enumerate() {
                let freq = cfg.bin_frequency(f);
                for doa in [a, b] {
                    let r = beamform(wf, &steering_vector(&g, doa, 0.0, freq));
                    assert!((r - 1.0).norm() <= 1e-6, "doa {doa} bin {f}: {r}");
                }
            }
        }
    }

    #[test]
    fn lcmv_rejects_identical_directions() {
        let g = ArrayGeometry::glasses_default();
        assert!(design_lcmv(&g, 20.0, 380.0, &StftConfig::default(), 1e-3).is_err());
    }

    #[test]
    fn lcmv_two_mics_solves_constraint_system() {
        // with M == 2 the constraints determine w; compare with the least-norm
        // solution C (C^H C)^{-1} 1
        let g = two_mics_x(0.08);
        let cfg = StftConfig::default();
        let w = design_lcmv(&g, 0.0, 70.0, &cfg, DEFAULT_LOADING).unwrap();
        for f in [4, 16, 64, 128] {
            let freq = cfg.bin_frequency(f);
            let d1 = steering_vector(&g, 0.0, 0.0, freq);
            let d2 = steering_vector(&g, 70.0, 0.0, freq);
            let c = DMatrix::from_fn(2, 2, |i, j| if j == 0 { d1[i] } else { d2[i] });
            let ones = DVector::from_element(2, Complex64::new(1.0, 0.0));
            let gram = c.adjoint() * &c;
            let ln = &c * gram.try_inverse().unwrap() * ones;
            for i in 0..2 {
                assert!((w[f][i] - ln[i]).norm() < 1e-6 * ln[i].norm().max(1.0));
            }
        }
    }

    #[test]
    fn container_round_trip() {
        let g = ArrayGeometry::glasses_default();
        let bank =
            design_maxdi(&g, &BlockGrid::default(), &StftConfig::default(), DEFAULT_LOADING).unwrap();
        let back = BeamformerBank::from_container(&bank.to_container()).unwrap();
        assert_eq!(back.weights, bank.weights);
        assert_eq!(back.grid, bank.grid);
        assert_eq!(back.config, bank.config);
    }
}
