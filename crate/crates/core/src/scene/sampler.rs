//! Random scene specifications under the placement constraints.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::catalog::{Catalog, ClipKind};
use super::rir::RoomSpec;
use crate::beamforming::geometry::direction;
use crate::beamforming::BlockGrid;
use crate::error::{Error, Result};
use crate::features::FovSpec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub sample_rate: u32,
    pub duration_s: f64,
    pub room_min: [f64; 3],
    pub room_max: [f64; 3],
    pub absorption: (f64, f64),
    pub max_image_order: usize,
    pub grid: BlockGrid,
    /// Every FoV block lies inside `(-limit, limit)` in the array frame.
    pub fov_limit_deg: f64,
    pub fov_blocks: (usize, usize),
    pub targets: (usize, usize),
    pub interferers: (usize, usize),
    pub noises: (usize, usize),
    pub interferer_margin_deg: f64,
    pub elevation_deg: (f64, f64),
    pub talker_distance_m: (f64, f64),
    pub noise_min_distance_m: f64,
    pub wall_clearance_m: f64,
    pub array_wall_clearance_m: f64,
    pub array_height_m: (f64, f64),
    pub snr_db: (f64, f64),
    pub sir_db: (f64, f64),
    /// Synthetic clips start anywhere in this many seconds.
    pub synthetic_offset_s: f64,
    pub max_rejections: usize,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            sample_rate: 16_000,
            duration_s: 2.0,
            room_min: [3.0, 3.0, 3.0],
            room_max: [10.0, 10.0, 4.0],
            absorption: (0.2, 0.8),
            max_image_order: 17,
            grid: BlockGrid::default(),
            fov_limit_deg: 99.0,
            fov_blocks: (2, 10),
            targets: (1, 2),
            interferers: (0, 3),
            noises: (1, 50),
            interferer_margin_deg: 10.0,
            elevation_deg: (-30.0, 30.0),
            talker_distance_m: (0.5, 3.0),
            noise_min_distance_m: 0.5,
            wall_clearance_m: 0.2,
            array_wall_clearance_m: 1.0,
            array_height_m: (1.5, 1.8),
            snr_db: (-10.0, 5.0),
            sir_db: (-2.0, 2.0),
            synthetic_offset_s: 10.0,
            max_rejections: 10_000,
        }
    }
}

impl SamplerConfig {
    pub fn num_samples(&self) -> usize {
        (self.duration_s * self.sample_rate as f64).round() as usize
    }

    /// Blocks whose whole span lies within `[-limit, limit]`.
    pub fn candidate_blocks(&self) -> Vec<usize> {
        (0..self.grid.num_blocks)
            .filter(|&k| {
                let (lo, hi) = self.grid.span(k);
                lo >= -self.fov_limit_deg - 1e-9 && hi <= self.fov_limit_deg + 1e-9
            })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        let cands = self.candidate_blocks();
        if self.fov_blocks.0 == 0 || self.fov_blocks.0 > self.fov_blocks.1 || self.fov_blocks.1 > cands.len() {
            return bad("FoV size range does not fit the allowed block range");
        }
        if self.targets.0 == 0 || self.targets.0 > self.targets.1 {
            return bad("need at least one target");
        }
        if self.interferers.0 > self.interferers.1 || self.noises.0 > self.noises.1 {
            return bad("invalid source count range");
        }
        if self.num_samples() == 0 {
            return bad("scene duration is zero");
        }
        if (0..3).any(|i| self.room_min[i] > self.room_max[i] || self.room_min[i] <= 2.0 * self.array_wall_clearance_m) {
            return bad("room size range too small for the array clearance");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SourceRole {
    Target,
    Interferer,
    Noise,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceSpec {
    pub role: SourceRole,
    pub position: [f64; 3],
    /// Direction from the array centre in the array frame.
    pub azimuth_deg: f64,
    pub elevation_deg: f64,
    pub distance_m: f64,
    pub clip_kind: ClipKind,
    pub clip_index: usize,
    pub clip_offset: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArrayPose {
    pub position: [f64; 3],
    /// Rotation of the array frame about the vertical axis, in degrees.
    pub yaw_deg: f64,
}

impl ArrayPose {
    /// Array-frame vector to room coordinates (without translation).
    pub fn to_room(&self, v: [f64; 3]) -> [f64; 3] {
        let (s, c) = self.yaw_deg.to_radians().sin_cos();
        [c * v[0] - s * v[1], s * v[0] + c * v[1], v[2]]
    }

    pub fn from_room(&self, v: [f64; 3]) -> [f64; 3] {
        let (s, c) = self.yaw_deg.to_radians().sin_cos();
        [c * v[0] + s * v[1], -s * v[0] + c * v[1], v[2]]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub seed: u64,
    pub sample_rate: u32,
    pub num_samples: usize,
    pub room: RoomSpec,
    pub array: ArrayPose,
    pub fov: FovSpec,
    pub sources: Vec<SourceSpec>,
    /// `None` mutes the noise sources.
    pub snr_db: Option<f64>,
    /// `None` when there are no interferers.
    pub sir_db: Option<f64>,
    /// Times the FoV size was redrawn because placement kept failing.
    #[serde(default)]
    pub fov_resamples: usize,
}

impl SceneSpec {
    pub fn sources_with(&self, role: SourceRole) -> impl Iterator<Item = &SourceSpec> {
        self.sources.iter().filter(move |s| s.role == role)
    }
}

fn wrap180(deg: f64) -> f64 {
    (deg + 180.0).rem_euclid(360.0) - 180.0
}

/// Distance from `origin` along unit `dir` to the boundary of the room
/// shrunk by `clearance`.
fn ray_exit(room: &RoomSpec, origin: [f64; 3], dir: [f64; 3], clearance: f64) -> f64 {
    let mut t = f64::INFINITY;
    for i in 0..3 {
        let (lo, hi) = (clearance, room.dimensions[i] - clearance);
        if dir[i] > 1e-12 {
            t = t.min((hi - origin[i]) / dir[i]);
        } else if dir[i] < -1e-12 {
            t = t.min((lo - origin[i]) / dir[i]);
        }
    }
    t.max(0.0)
}

struct Placer<'a> {
    cfg: &'a SamplerConfig,
    catalog: &'a Catalog,
    room: &'a RoomSpec,
    array: ArrayPose,
}

impl Placer<'_> {
    fn clip(&self, rng: &mut ChaCha8Rng, kind: ClipKind) -> Result<(usize, usize)> {
        let n = self.catalog.list(kind).len();
        let index = rng.gen_range(0..n);
        let offset = match self.catalog.clip_len(kind, index)? {
            Some(len) if len > 0 => rng.gen_range(0..len),
            _ => rng.gen_range(0..=(self.cfg.synthetic_offset_s * self.cfg.sample_rate as f64) as usize),
        };
        Ok((index, offset))
    }

    /// Talker at an azimuth drawn from `[az_lo, az_hi]` (array frame).
    fn talker(&self, rng: &mut ChaCha8Rng, az_lo: f64, az_hi: f64) -> Option<([f64; 3], f64, f64, f64)> {
        let az = rng.gen_range(az_lo..=az_hi);
        let el = rng.gen_range(self.cfg.elevation_deg.0..=self.cfg.elevation_deg.1);
        let dir = self.array.to_room(direction(az, el));
        let (d_min, d_max) = self.cfg.talker_distance_m;
        let exit = ray_exit(self.room, self.array.position, dir, self.cfg.wall_clearance_m);
        let d_max = d_max.min(exit - 1e-6);
        if d_max < d_min {
            return None;
        }
        let d = rng.gen_range(d_min..=d_max);
        let p = self.array.position;
        Some(([p[0] + d * dir[0], p[1] + d * dir[1], p[2] + d * dir[2]], wrap180(az), el, d))
    }

    fn noise(&self, rng: &mut ChaCha8Rng) -> Option<([f64; 3], f64, f64, f64)> {
        let c = self.cfg.wall_clearance_m;
        let p: [f64; 3] = std::array::from_fn(|i| rng.gen_range(c..self.room.dimensions[i] - c));
        let rel = [
            p[0] - self.array.position[0],
            p[1] - self.array.position[1],
            p[2] - self.array.position[2],
        ];
        let d = (rel[0] * rel[0] + rel[1] * rel[1] + rel[2] * rel[2]).sqrt();
        if d < self.cfg.noise_min_distance_m {
            return None;
        }
        let a = self.array.from_room(rel);
        let az = a[1].atan2(a[0]).to_degrees();
        let el = (a[2] / d).asin().to_degrees();
        Some((p, az, el, d))
    }
}

/// Draws a scene; the same `(seed, config, catalog)` always gives the same
/// specification.
pub fn sample_scene(seed: u64, cfg: &SamplerConfig, catalog: &Catalog) -> Result<SceneSpec> {
    cfg.validate()?;
    catalog.require_nonempty()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let dimensions: [f64; 3] = std::array::from_fn(|i| rng.gen_range(cfg.room_min[i]..=cfg.room_max[i]));
    let alpha = rng.gen_range(cfg.absorption.0..=cfg.absorption.1);
    let room = RoomSpec {
        dimensions,
        absorption: [alpha; 6],
        max_image_order: cfg.max_image_order,
    };
    let ac = cfg.array_wall_clearance_m;
    let (h_lo, h_hi) = cfg.array_height_m;
    let array = ArrayPose {
        position: [
            rng.gen_range(ac..=dimensions[0] - ac),
            rng.gen_range(ac..=dimensions[1] - ac),
            rng.gen_range(h_lo.min(dimensions[2] - ac)..=h_hi.min(dimensions[2] - ac)),
        ],
        yaw_deg: rng.gen_range(-180.0..180.0),
    };
    let n_targets = rng.gen_range(cfg.targets.0..=cfg.targets.1);
    let n_interferers = rng.gen_range(cfg.interferers.0..=cfg.interferers.1);
    let n_noises = rng.gen_range(cfg.noises.0..=cfg.noises.1);
    let snr_db = rng.gen_range(cfg.snr_db.0..=cfg.snr_db.1);
    let sir_db = rng.gen_range(cfg.sir_db.0..=cfg.sir_db.1);

    let placer = Placer {
        cfg,
        catalog,
        room: &room,
        array,
    };
    let cands = cfg.candidate_blocks();
    let mut fov_resamples = 0;
    loop {
        let size = rng.gen_range(cfg.fov_blocks.0..=cfg.fov_blocks.1);
        let first = cands[rng.gen_range(0..=cands.len() - size)];
        let fov = FovSpec::from_block_run(&cfg.grid, first, size)?;
        let (fov_lo, fov_hi) = fov.resolved_edges(&cfg.grid);
        let out_lo = fov_hi + cfg.interferer_margin_deg;
        let out_hi = fov_lo + 360.0 - cfg.interferer_margin_deg;

        let mut sources = Vec::with_capacity(n_targets + n_interferers + n_noises);
        let mut rejections = 0;
        let plan = std::iter::repeat_n(SourceRole::Target, n_targets)
            .chain(std::iter::repeat_n(SourceRole::Interferer, n_interferers))
            .chain(std::iter::repeat_n(SourceRole::Noise, n_noises));
        let mut failed = false;
        for role in plan {
            let placed = loop {
                let attempt = match role {
                    SourceRole::Target => placer.talker(&mut rng, fov_lo, fov_hi),
                    SourceRole::Interferer if out_lo < out_hi => placer.talker(&mut rng, out_lo, out_hi),
                    SourceRole::Interferer => None,
                    SourceRole::Noise => placer.noise(&mut rng),
                };
                if attempt.is_some() {
                    break attempt;
                }
                rejections += 1;
                if rejections > cfg.max_rejections {
                    break None;
                }
            };
            let Some((position, azimuth_deg, elevation_deg, distance_m)) = placed else {
                failed = true;
                break;
            };
            let clip_kind = if role == SourceRole::Noise { ClipKind::Noise } else { ClipKind::Speech };
            let (clip_index, clip_offset) = placer.clip(&mut rng, clip_kind)?;
            sources.push(SourceSpec {
                role,
                position,
                azimuth_deg,
                elevation_deg,
                distance_m,
                clip_kind,
                clip_index,
                clip_offset,
            });
        }
        if failed {
            fov_resamples += 1;
            log::warn!("scene {seed}: placement failed for a {size}-block FoV; redrawing the FoV size");
            if fov_resamples > 100 {
                return Err(Error::Scene(format!("scene {seed}: constraints unsatisfiable")));
            }
            continue;
        }
        return Ok(SceneSpec {
            seed,
            sample_rate: cfg.sample_rate,
            num_samples: cfg.num_samples(),
            room,
            array,
            fov,
            sources,
            snr_db: Some(snr_db),
            sir_db: (n_interferers > 0).then_some(sir_db),
            fov_resamples,
        });
    }
}

/// Every violated constraint, empty when the scene is valid.
pub fn check_scene(spec: &SceneSpec, cfg: &SamplerConfig) -> Vec<String> {
    let mut errs = Vec::new();
    let grid = cfg.grid;
    let n = spec.fov.blocks.len();
    if n < cfg.fov_blocks.0 || n > cfg.fov_blocks.1 {
        errs.push(format!("FoV has {n} blocks"));
    }
    for &b in &spec.fov.blocks {
        let (lo, hi) = grid.span(b);
        if lo < -cfg.fov_limit_deg - 1e-9 || hi > cfg.fov_limit_deg + 1e-9 {
            errs.push(format!("FoV block {b} spans [{lo}, {hi}]"));
        }
    }
    let (fov_lo, fov_hi) = spec.fov.resolved_edges(&grid);
    let count = |r| spec.sources_with(r).count();
    for (role, (lo, hi)) in [
        (SourceRole::Target, cfg.targets),
        (SourceRole::Interferer, cfg.interferers),
        (SourceRole::Noise, cfg.noises),
    ] {
        let c = count(role);
        if c < lo || c > hi {
            errs.push(format!("{c} {role:?} sources"));
        }
    }
    for s in &spec.sources {
        if !spec.room.contains(s.position, 0.0) {
            errs.push(format!("{:?} source outside the room", s.role));
        }
        let rel: [f64; 3] = std::array::from_fn(|i| s.position[i] - spec.array.position[i]);
        let a = spec.array.from_room(rel);
        let d = (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt();
        let az = a[1].atan2(a[0]).to_degrees();
        let el = (a[2] / d).asin().to_degrees();
        if (az - s.azimuth_deg).abs().min(360.0 - (az - s.azimuth_deg).abs()) > 1e-6 {
            errs.push(format!("stored azimuth {} differs from geometry {az}", s.azimuth_deg));
        }
        // angular offset of the source past the FoV start, in [0, 360)
        let rel_az = (az - fov_lo).rem_euclid(360.0);
        let span = fov_hi - fov_lo;
        match s.role {
            SourceRole::Target => {
                if rel_az > span + 1e-6 && rel_az < 360.0 - 1e-6 {
                    errs.push(format!("target at {az} outside FoV [{fov_lo}, {fov_hi}]"));
                }
            }
            SourceRole::Interferer => {
                let gap = (rel_az - span).min(360.0 - rel_az);
                if gap < cfg.interferer_margin_deg - 1e-6 {
                    errs.push(format!("interferer at {az} only {gap} deg from the FoV"));
                }
            }
            SourceRole::Noise => {}
        }
        if s.role != SourceRole::Noise && (el < cfg.elevation_deg.0 - 1e-6 || el > cfg.elevation_deg.1 + 1e-6) {
            errs.push(format!("{:?} elevation {el}", s.role));
        }
    }
    if let Some(snr) = spec.snr_db {
        if snr < cfg.snr_db.0 || snr > cfg.snr_db.1 {
            errs.push(format!("SNR {snr}"));
        }
    }
    match (spec.sir_db, count(SourceRole::Interferer)) {
        (Some(sir), c) if c > 0 && (sir < cfg.sir_db.0 || sir > cfg.sir_db.1) => errs.push(format!("SIR {sir}")),
        (Some(_), 0) => errs.push("SIR set without interferers".into()),
        (None, c) if c > 0 => errs.push("interferers without SIR".into()),
        _ => {}
    }
    errs
}

#[cfg(test)]
mod tests {
    use super::*;

    fn catalog() -> Catalog {
        Catalog::synthetic(4, 4, 0)
    }

    #[test]
    fn candidate_blocks_are_the_front_eleven() {
        assert_eq!(SamplerConfig::default().candidate_blocks(), (5..=15).collect::<Vec<_>>());
    }

    #[test]
    fn sampling_is_deterministic() {
        let cfg = SamplerConfig::default();
        let a = sample_scene(42, &cfg, &catalog()).unwrap();
        assert_eq!(a, sample_scene(42, &cfg, &catalog()).unwrap());
        assert_ne!(a, sample_scene(43, &cfg, &catalog()).unwrap());
    }

    #[test]
    fn sampled_scenes_satisfy_all_constraints() {
        let cfg = SamplerConfig::default();
        for seed in 0..300 {
            let s = sample_scene(seed, &cfg, &catalog()).unwrap();
            let errs = check_scene(&s, &cfg);
            assert!(errs.is_empty(), "seed {seed}: {errs:?}");
        }
    }

    #[test]
    fn checker_catches_violations() {
        let cfg = SamplerConfig::default();
        let mut s = sample_scene(5, &cfg, &catalog()).unwrap();
        s.fov = FovSpec::from_block_run(&cfg.grid, 4, 3).unwrap();
        assert!(!check_scene(&s, &cfg).is_empty());
        let mut s = sample_scene(5, &cfg, &catalog()).unwrap();
        s.snr_db = Some(9.0);
        assert!(!check_scene(&s, &cfg).is_empty());
    }

    #[test]
    fn wide_fovs_are_redrawn_when_interferers_cannot_fit() {
        // A 120 degree margin on both sides leaves no room beside FoVs wider than 6 blocks.
        let cfg = SamplerConfig {
            interferers: (1, 1),
            interferer_margin_deg: 120.0,
            max_rejections: 20,
            ..SamplerConfig::default()
        };
        let mut redrawn = 0;
        for seed in 0..40 {
            let s = sample_scene(seed, &cfg, &catalog()).unwrap();
            assert!(s.fov.blocks.len() <= 6);
            assert!(check_scene(&s, &cfg).is_empty());
            redrawn += s.fov_resamples;
        }
        assert!(redrawn > 0);
        let impossible = SamplerConfig {
            interferer_margin_deg: 175.0,
            ..cfg
        };
        assert!(matches!(sample_scene(0, &impossible, &catalog()), Err(Error::Scene(_))));
    }

    #[test]
    fn empty_catalog_is_rejected() {
        let cfg = SamplerConfig::default();
        assert!(matches!(sample_scene(0, &cfg, &Catalog::default()), Err(Error::EmptyCorpus)));
    }
}
