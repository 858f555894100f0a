//! Mixing a sampled scene: per-source images at every microphone, then
//! noise and interference scaled to the requested ratios.

use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use super::catalog::Catalog;
use super::rir::{simulate_rir, RirConfig};
use super::sampler::{SceneSpec, SourceRole};
use crate::beamforming::ArrayGeometry;
use crate::error::{Error, Result};

/// Linear convolution truncated to the input length, via one FFT size.
struct Convolver {
    n: usize,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

impl Convolver {
    fn new(len: usize) -> Self {
        let n = len.next_power_of_two();
        let mut planner = FftPlanner::new();
        Self {
            n,
            fwd: planner.plan_fft_forward(n),
            inv: planner.plan_fft_inverse(n),
        }
    }

    fn spectrum(&self, x: &[f64]) -> Vec<Complex64> {
        let mut buf = vec![Complex64::new(0.0, 0.0); self.n];
        for (b, &v) in buf.iter_mut().zip(x) {
            b.re = v;
        }
        self.fwd.process(&mut buf);
        buf
    }

    fn apply(&self, xs: &[Complex64], h: &[f64], out_len: usize) -> Vec<f64> {
        let mut buf = self.spectrum(h);
        for (b, x) in buf.iter_mut().zip(xs) {
            *b *= x;
        }
        self.inv.process(&mut buf);
        let scale = 1.0 / self.n as f64;
        buf[..out_len].iter().map(|c| c.re * scale).collect()
    }
}

/// Room-coordinate microphone positions for a scene's array pose.
pub fn mic_positions(spec: &SceneSpec, geometry: &ArrayGeometry) -> Vec<[f64; 3]> {
    geometry
        .mics
        .iter()
        .map(|m| {
            let r = spec.array.to_room(m.position);
            std::array::from_fn(|i| spec.array.position[i] + r[i])
        })
        .collect()
}

/// Unscaled image `[M][samples]` of every source, in `spec.sources` order.
pub fn source_images(
    spec: &SceneSpec,
    catalog: &Catalog,
    geometry: &ArrayGeometry,
    rir: &RirConfig,
) -> Result<Vec<Vec<Vec<f64>>>> {
    if rir.sample_rate != spec.sample_rate {
        return Err(Error::SampleRate {
            found: spec.sample_rate,
            expected: rir.sample_rate,
        });
    }
    let len = spec.num_samples;
    let mics = mic_positions(spec, geometry);
    let rir_len = (rir.max_duration_s * rir.sample_rate as f64).ceil() as usize;
    let conv = Convolver::new(len + rir_len);
    spec.sources
        .iter()
        .map(|s| {
            let clip = catalog.clip(s.clip_kind, s.clip_index, s.clip_offset, len)?;
            if clip.iter().all(|&v| v == 0.0) {
                return Err(Error::Scene(format!(
                    "{:?} clip {} has zero energy at offset {}",
                    s.clip_kind, s.clip_index, s.clip_offset
                )));
            }
            let xs = conv.spectrum(&clip);
            mics.iter()
                .map(|&mic| {
                    let h = simulate_rir(&spec.room, s.position, mic, rir)?;
                    Ok(conv.apply(&xs, &h, len))
                })
                .collect()
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneRender {
    /// `[M][samples]`
    pub mixture: Vec<Vec<f64>>,
    /// Target-image sum at the reference microphone.
    pub target: Vec<f64>,
    /// Unscaled per-source images `[source][M][samples]`.
    pub images: Vec<Vec<Vec<f64>>>,
    /// Gain applied to each source image (1 for targets).
    pub gains: Vec<f64>,
    pub reference_channel: usize,
    pub measured_snr_db: f64,
    pub measured_sir_db: Option<f64>,
}

fn energy(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

fn ratio_db(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (num / den).log10()
    }
}

fn group_sum(images: &[Vec<Vec<f64>>], roles: &[SourceRole], role: SourceRole, m: usize, len: usize) -> Vec<f64> {
    let mut acc = vec![0.0; len];
    for (img, &r) in images.iter().zip(roles) {
        if r == role {
            for (a, v) in acc.iter_mut().zip(&img[m]) {
                *a += v;
            }
        }
    }
    acc
}

/// Scales interferer and noise images so the reference-channel ratios
/// against the target-image sum match `spec`, then sums everything.
pub fn mix_images(spec: &SceneSpec, images: Vec<Vec<Vec<f64>>>, reference_channel: usize) -> Result<SceneRender> {
    let roles: Vec<SourceRole> = spec.sources.iter().map(|s| s.role).collect();
    let len = spec.num_samples;
    let r = reference_channel;
    let target = group_sum(&images, &roles, SourceRole::Target, r, len);
    let e_t = energy(&target);
    if e_t == 0.0 {
        return Err(Error::ZeroEnergy);
    }
    let e_i = energy(&group_sum(&images, &roles, SourceRole::Interferer, r, len));
    let e_n = energy(&group_sum(&images, &roles, SourceRole::Noise, r, len));
    let g_i = match spec.sir_db {
        Some(sir) if e_i > 0.0 => (e_t / (e_i * 10f64.powf(sir / 10.0))).sqrt(),
        Some(_) if roles.contains(&SourceRole::Interferer) => {
            return Err(Error::Scene("interferer images have zero energy".into()))
        }
        _ => 0.0,
    };
    let g_n = match spec.snr_db {
        Some(snr) if e_n > 0.0 => (e_t / (e_n * 10f64.powf(snr / 10.0))).sqrt(),
        Some(_) if roles.contains(&SourceRole::Noise) => {
            return Err(Error::Scene("noise images have zero energy".into()))
        }
        _ => 0.0,
    };
    let gains: Vec<f64> = roles
        .iter()
        .map(|role| match role {
            SourceRole::Target => 1.0,
            SourceRole::Interferer => g_i,
            SourceRole::Noise => g_n,
        })
        .collect();
    let num_mics = images.first().map_or(0, Vec::len);
    let mut mixture = vec![vec![0.0; len]; num_mics];
    for (img, &g) in images.iter().zip(&gains) {
        for (out, ch) in mixture.iter_mut().zip(img) {
            for (o, v) in out.iter_mut().zip(ch) {
                *o += g * v;
            }
        }
    }
    let scaled = |role| -> f64 {
        let mut acc = vec![0.0; len];
        for ((img, &g), &rl) in images.iter().zip(&gains).zip(&roles) {
            if rl == role {
                for (a, v) in acc.iter_mut().zip(&img[r]) {
                    *a += g * v;
                }
            }
        }
        energy(&acc)
    };
    let measured_snr_db = ratio_db(e_t, scaled(SourceRole::Noise));
    let measured_sir_db = spec.sir_db.map(|_| ratio_db(e_t, scaled(SourceRole::Interferer)));
    Ok(SceneRender {
        mixture,
        target,
        images,
        gains,
        reference_channel: r,
        measured_snr_db,
        measured_sir_db,
    })
}

pub fn render_scene(
    spec: &SceneSpec,
    catalog: &Catalog,
    geometry: &ArrayGeometry,
    rir: &RirConfig,
) -> Result<SceneRender> {
    let images = source_images(spec, catalog, geometry, rir)?;
    mix_images(spec, images, geometry.reference_channel)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::sampler::{sample_scene, SamplerConfig};

    fn small_cfg() -> SamplerConfig {
        SamplerConfig {
            duration_s: 0.5,
            noises: (1, 4),
            max_image_order: 4,
            ..SamplerConfig::default()
        }
    }

    fn rir() -> RirConfig {
        RirConfig {
            max_duration_s: 0.1,
            ..RirConfig::default()
        }
    }

    #[test]
    fn fft_convolution_matches_direct_sum() {
        let x: Vec<f64> = (0..300).map(|i| ((i * 7919) % 101) as f64 / 50.0 - 1.0).collect();
        let h: Vec<f64> = (0..40).map(|i| 0.9f64.powi(i) * if i % 3 == 0 { -1.0 } else { 1.0 }).collect();
        let conv = Convolver::new(x.len() + h.len());
        let y = conv.apply(&conv.spectrum(&x), &h, x.len());
        for n in 0..x.len() {
            let direct: f64 = (0..h.len()).filter(|&k| k <= n).map(|k| h[k] * x[n - k]).sum();
            assert!((y[n] - direct).abs() < 1e-10);
        }
    }

    #[test]
    fn ratios_match_the_spec() {
        let cat = Catalog::synthetic(4, 4, 1);
        let geom = ArrayGeometry::glasses_default();
        let cfg = SamplerConfig {
            interferers: (1, 3),
            ..small_cfg()
        };
        for seed in 0..3 {
            let spec = sample_scene(seed, &cfg, &cat).unwrap();
            let r = render_scene(&spec, &cat, &geom, &rir()).unwrap();
            assert!((r.measured_snr_db - spec.snr_db.unwrap()).abs() < 0.01);
            assert!((r.measured_sir_db.unwrap() - spec.sir_db.unwrap()).abs() < 0.01);
            assert_eq!(r.mixture.len(), geom.num_mics());
            assert!(r.mixture.iter().all(|c| c.len() == spec.num_samples));
        }
    }

    #[test]
    fn muted_noise_leaves_only_targets() {
        let cat = Catalog::synthetic(2, 2, 1);
        let geom = ArrayGeometry::glasses_default();
        let cfg = SamplerConfig {
            interferers: (0, 0),
            ..small_cfg()
        };
        let mut spec = sample_scene(3, &cfg, &cat).unwrap();
        spec.snr_db = None;
        let r = render_scene(&spec, &cat, &geom, &rir()).unwrap();
        assert_eq!(r.mixture[geom.reference_channel], r.target);
        assert!(r.measured_snr_db.is_infinite());
    }

    #[test]
    fn mixture_is_the_sum_of_scaled_source_renders() {
        let cat = Catalog::synthetic(3, 3, 2);
        let geom = ArrayGeometry::glasses_default();
        let spec = sample_scene(8, &small_cfg(), &cat).unwrap();
        let joint = render_scene(&spec, &cat, &geom, &rir()).unwrap();
        let mut acc = vec![vec![0.0; spec.num_samples]; geom.num_mics()];
        for (i, &g) in joint.gains.iter().enumerate() {
            let mut single = spec.clone();
            single.sources = vec![spec.sources[i].clone()];
            let img = source_images(&single, &cat, &geom, &rir()).unwrap().remove(0);
            assert_eq!(img, joint.images[i]);
            for (a, ch) in acc.iter_mut().zip(&img) {
                for (x, v) in a.iter_mut().zip(ch) {
                    *x += g * v;
                }
            }
        }
        assert_eq!(acc, joint.mixture);
    }

    #[test]
    fn rendering_is_deterministic() {
        let cat = Catalog::synthetic(2, 2, 4);
        let geom = ArrayGeometry::glasses_default();
        let spec = sample_scene(11, &small_cfg(), &cat).unwrap();
        let a = render_scene(&spec, &cat, &geom, &rir()).unwrap();
        let b = render_scene(&spec, &cat, &geom, &rir()).unwrap();
        assert_eq!(a, b);
    }
}
