//! On-disk scene datasets.
//!
//! ```text
//! <root>/index.json
//! <root>/scene_00000/mixture.wav    M-channel float32, 16 kHz
//! <root>/scene_00000/target.wav     mono float32 target-image sum at the reference mic
//! <root>/scene_00000/manifest.json  SceneManifest
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::catalog::Catalog;
use super::render::{render_scene, SceneRender};
use super::rir::RirConfig;
use super::sampler::{sample_scene, SamplerConfig, SceneSpec};
use crate::beamforming::ArrayGeometry;
use crate::dsp::wav::{read_pipeline_wav, write_wav, WavFormat};
use crate::error::{Error, Result};

pub const MANIFEST_VERSION: u32 = 1;
pub const MIXTURE_FILE: &str = "mixture.wav";
pub const TARGET_FILE: &str = "target.wav";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const INDEX_FILE: &str = "index.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneManifest {
    pub version: u32,
    pub mixture: String,
    pub target: String,
    pub num_channels: usize,
    pub reference_channel: usize,
    pub measured_snr_db: Option<f64>,
    pub measured_sir_db: Option<f64>,
    pub source_gains: Vec<f64>,
    pub spec: SceneSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetIndex {
    pub version: u32,
    pub base_seed: u64,
    pub sampler: SamplerConfig,
    pub rir: RirConfig,
    pub geometry: ArrayGeometry,
    /// Scene directories relative to the dataset root.
    pub scenes: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct LoadedScene {
    pub manifest: SceneManifest,
    pub mixture: Vec<Vec<f64>>,
    pub target: Vec<f64>,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Parse(e.to_string()))?;
    std::fs::write(path, text).map_err(io_err(path))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
}

/// Non-finite dB values are stored as null.
fn finite(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

pub fn write_scene(dir: &Path, spec: &SceneSpec, render: &SceneRender) -> Result<SceneManifest> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    write_wav(dir.join(MIXTURE_FILE), &render.mixture, spec.sample_rate, WavFormat::Float32)?;
    write_wav(dir.join(TARGET_FILE), std::slice::from_ref(&render.target), spec.sample_rate, WavFormat::Float32)?;
    let manifest = SceneManifest {
        version: MANIFEST_VERSION,
        mixture: MIXTURE_FILE.into(),
        target: TARGET_FILE.into(),
        num_channels: render.mixture.len(),
        reference_channel: render.reference_channel,
        measured_snr_db: finite(render.measured_snr_db),
        measured_sir_db: render.measured_sir_db.and_then(finite),
        source_gains: render.gains.clone(),
        spec: spec.clone(),
    };
    write_json(&dir.join(MANIFEST_FILE), &manifest)?;
    Ok(manifest)
}

pub fn load_scene(dir: impl AsRef<Path>) -> Result<LoadedScene> {
    let dir = dir.as_ref();
    let manifest: SceneManifest = read_json(&dir.join(MANIFEST_FILE))?;
    if manifest.version != MANIFEST_VERSION {
        return Err(Error::Parse(format!("unsupported manifest version {}", manifest.version)));
    }
    let mixture = read_pipeline_wav(dir.join(&manifest.mixture))?.channels;
    let mut target = read_pipeline_wav(dir.join(&manifest.target))?.channels;
    if mixture.len() != manifest.num_channels || target.len() != 1 {
        return Err(Error::ShapeMismatch(format!("{}: channel count differs from manifest", dir.display())));
    }
    let target = target.remove(0);
    if mixture[0].len() != target.len() {
        return Err(Error::ShapeMismatch(format!("{}: mixture and target lengths differ", dir.display())));
    }
    Ok(LoadedScene {
        manifest,
        mixture,
        target,
    })
}

/// Samples, renders and writes `count` scenes with seeds
/// `base_seed, base_seed + 1, ...`.
pub fn generate_dataset(
    root: impl AsRef<Path>,
    count: usize,
    base_seed: u64,
    sampler: &SamplerConfig,
    catalog: &Catalog,
    geometry: &ArrayGeometry,
    rir: &RirConfig,
) -> Result<DatasetIndex> {
    let root = root.as_ref();
    std::fs::create_dir_all(root).map_err(io_err(root))?;
    let mut scenes = Vec::with_capacity(count);
    for i in 0..count {
        let seed = base_seed.wrapping_add(i as u64);
        let spec = sample_scene(seed, sampler, catalog)?;
        let render = render_scene(&spec, catalog, geometry, rir)?;
        let name = format!("scene_{i:05}");
        write_scene(&root.join(&name), &spec, &render)?;
        log::info!("wrote {name} (seed {seed})");
        scenes.push(name);
    }
    let index = DatasetIndex {
        version: MANIFEST_VERSION,
        base_seed,
        sampler: sampler.clone(),
        rir: *rir,
        geometry: geometry.clone(),
        scenes,
    };
    write_json(&root.join(INDEX_FILE), &index)?;
    Ok(index)
}

/// Index plus absolute scene directories.
pub fn load_dataset(root: impl AsRef<Path>) -> Result<(DatasetIndex, Vec<PathBuf>)> {
    let root = root.as_ref();
    let index: DatasetIndex = read_json(&root.join(INDEX_FILE))?;
    if index.scenes.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let dirs = index.scenes.iter().map(|s| root.join(s)).collect();
    Ok((index, dirs))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dataset_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let cat = Catalog::synthetic(2, 2, 3);
        let geom = ArrayGeometry::glasses_default();
        let cfg = SamplerConfig {
            duration_s: 0.25,
            noises: (1, 2),
            max_image_order: 2,
            ..SamplerConfig::default()
        };
        let rir = RirConfig {
            max_duration_s: 0.05,
            ..RirConfig::default()
        };
        let index = generate_dataset(dir.path(), 2, 100, &cfg, &cat, &geom, &rir).unwrap();
        let (loaded_index, dirs) = load_dataset(dir.path()).unwrap();
        assert_eq!(index, loaded_index);
        assert_eq!(dirs.len(), 2);
        let scene = load_scene(&dirs[1]).unwrap();
        assert_eq!(scene.manifest.spec, sample_scene(101, &cfg, &cat).unwrap());
        let render = render_scene(&scene.manifest.spec, &cat, &geom, &rir).unwrap();
        for (a, b) in scene.target.iter().zip(&render.target) {
            assert_eq!(*a, *b as f32 as f64);
        }
        assert_eq!(scene.mixture.len(), geom.num_mics());
    }

    #[test]
    fn missing_dataset_is_an_io_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(load_dataset(dir.path().join("nope")), Err(Error::Io { .. })));
    }
}
