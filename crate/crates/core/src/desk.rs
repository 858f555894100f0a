//! Desk-scale workflow: render a handful of scenes, fit normalization
//! statistics, train the network and score it.

use crate::beamforming::ArrayGeometry;
use crate::engine::Pipeline;
use crate::error::{Error, Result};
use crate::dsp::{pad_signal, MultichannelSpectrum};
use crate::features::{compute_norm_stats, FovSpec, NormStats};
use crate::metrics::si_sdr;
use crate::net::{
    enhance_example, loss_terms, train_desk, ArchConfig, EpochStats, LossConfig, Mode, NetworkWeights,
    TrainConfig, TrainReport, TrainingExample,
};
use crate::scene::{
    load_scene, render_scene, sample_scene, Catalog, LoadedScene, RirConfig, SamplerConfig, SceneSpec, SourceRole,
    SourceSpec,
};

/// A rendered scene held in memory.
#[derive(Debug, Clone)]
pub struct DeskScene {
    pub name: String,
    pub spec: SceneSpec,
    pub mixture: Vec<Vec<f64>>,
    pub target: Vec<f64>,
}

impl From<LoadedScene> for DeskScene {
    fn from(s: LoadedScene) -> Self {
        Self {
            name: format!("scene_{:05}", s.manifest.spec.seed),
            spec: s.manifest.spec,
            mixture: s.mixture,
            target: s.target,
        }
    }
}

/// Samples and renders `count` scenes with seeds `base_seed..`.
pub fn render_scenes(
    count: usize,
    base_seed: u64,
    sampler: &SamplerConfig,
    catalog: &Catalog,
    geometry: &ArrayGeometry,
    rir: &RirConfig,
) -> Result<Vec<DeskScene>> {
    (0..count)
        .map(|i| {
            let seed = base_seed.wrapping_add(i as u64);
            let spec = sample_scene(seed, sampler, catalog)?;
            let render = render_scene(&spec, catalog, geometry, rir)?;
            Ok(DeskScene {
                name: format!("scene_{seed:05}"),
                spec,
                mixture: render.mixture,
                target: render.target,
            })
        })
        .collect()
}

pub fn load_scenes(dirs: &[std::path::PathBuf]) -> Result<Vec<DeskScene>> {
    dirs.iter().map(|d| load_scene(d).map(DeskScene::from)).collect()
}

/// Feature normalization statistics over the padded mixtures.
pub fn fit_norm_stats(pipeline: &Pipeline, scenes: &[DeskScene]) -> Result<NormStats> {
    let spectra: Vec<MultichannelSpectrum> = scenes
        .iter()
        .map(|s| {
            let padded: Vec<Vec<f64>> = s.mixture.iter().map(|c| pad_signal(c, pipeline.config())).collect();
            MultichannelSpectrum::from_signals(&padded, &pipeline.stft)
        })
        .collect::<Result<_>>()?;
    compute_norm_stats(&spectra, &pipeline.bank, &pipeline.fb)
}

pub fn prepare_examples(pipeline: &Pipeline, scenes: &[DeskScene], stats: &NormStats) -> Result<Vec<TrainingExample>> {
    scenes
        .iter()
        .map(|s| TrainingExample::prepare(&s.mixture, &s.target, s.spec.fov.clone(), &pipeline.bank, &pipeline.fb, stats))
        .collect()
}

/// Mean loss over examples with the given batchnorm mode.
pub fn mean_loss(
    w: &NetworkWeights,
    examples: &[TrainingExample],
    pipeline: &Pipeline,
    cfg: &LossConfig,
    mode: Mode,
) -> Result<f64> {
    if examples.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut sum = 0.0;
    for ex in examples {
        let est = enhance_example(w, ex, &pipeline.fb, mode)?;
        sum += loss_terms(&est, &ex.target, cfg)?.total;
    }
    Ok(sum / examples.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeskOutcome {
    pub weights: NetworkWeights,
    pub report: TrainReport,
    /// Loss of the initial weights (batch statistics).
    pub initial_loss: f64,
    /// Loss of the trained weights in inference mode.
    pub final_loss: f64,
    pub noisy_si_sdr_db: f64,
    pub enhanced_si_sdr_db: f64,
}

impl DeskOutcome {
    /// Fractional loss reduction relative to the initial magnitude.
    pub fn loss_reduction(&self) -> f64 {
        (self.initial_loss - self.final_loss) / self.initial_loss.abs()
    }

    pub fn si_sdr_gain_db(&self) -> f64 {
        self.enhanced_si_sdr_db - self.noisy_si_sdr_db
    }
}

/// Fits normalization, initializes, trains and scores on the same scenes.
pub fn train_on_scenes(
    pipeline: &Pipeline,
    scenes: &[DeskScene],
    arch: &ArchConfig,
    init_seed: u64,
    cfg: &TrainConfig,
    on_epoch: impl FnMut(&EpochStats),
) -> Result<DeskOutcome> {
    let stats = fit_norm_stats(pipeline, scenes)?;
    let mut w = NetworkWeights::init(arch, init_seed)?;
    w.norm = stats.clone();
    let examples = prepare_examples(pipeline, scenes, &stats)?;
    let initial_loss = mean_loss(&w, &examples, pipeline, &cfg.loss, Mode::Train)?;
    let report = train_desk(&mut w, &examples, &pipeline.fb, cfg, on_epoch)?;
    let final_loss = mean_loss(&w, &examples, pipeline, &cfg.loss, Mode::Infer)?;
    let (enhanced_si_sdr_db, noisy_si_sdr_db) = crate::net::evaluate_examples(&w, &examples, &pipeline.fb)?;
    Ok(DeskOutcome {
        weights: w,
        report,
        initial_loss,
        final_loss,
        noisy_si_sdr_db,
        enhanced_si_sdr_db,
    })
}

/// Network-stage SI-SDR (dB) of one mixture against a reference signal.
pub fn network_si_sdr(
    w: &NetworkWeights,
    pipeline: &Pipeline,
    mixture: &[Vec<f64>],
    reference: &[f64],
    fov: &FovSpec,
) -> Result<f64> {
    let ex = TrainingExample::prepare(mixture, reference, fov.clone(), &pipeline.bank, &pipeline.fb, &w.norm)?;
    si_sdr(&enhance_example(w, &ex, &pipeline.fb, Mode::Infer)?, reference)
}

/// One talker rendered at two positions around the same FoV: inside it and
/// outside it. Room, array, noise field and input SNR are shared.
#[derive(Debug, Clone)]
pub struct SelectivityPair {
    pub seed: u64,
    pub fov: FovSpec,
    pub inside: DeskScene,
    pub outside: DeskScene,
}

/// Draws `count` pairs. Each is sampled with one target and one interferer;
/// the outside case moves the target's clip to the interferer's position.
/// `sampler.interferer_margin_deg` sets how far outside the FoV it lands.
pub fn selectivity_pairs(
    count: usize,
    base_seed: u64,
    sampler: &SamplerConfig,
    catalog: &Catalog,
    geometry: &ArrayGeometry,
    rir: &RirConfig,
) -> Result<Vec<SelectivityPair>> {
    let cfg = SamplerConfig {
        targets: (1, 1),
        interferers: (1, 1),
        ..sampler.clone()
    };
    (0..count)
        .map(|i| {
            let seed = base_seed.wrapping_add(i as u64);
            let spec = sample_scene(seed, &cfg, catalog)?;
            let talker = spec.sources_with(SourceRole::Target).next().cloned().ok_or(Error::ZeroEnergy)?;
            let away = spec.sources_with(SourceRole::Interferer).next().cloned().ok_or(Error::ZeroEnergy)?;
            let noises: Vec<SourceSpec> = spec.sources_with(SourceRole::Noise).cloned().collect();
            let moved = SourceSpec {
                role: SourceRole::Target,
                position: away.position,
                azimuth_deg: away.azimuth_deg,
                elevation_deg: away.elevation_deg,
                distance_m: away.distance_m,
                ..talker.clone()
            };
            let case = |t: SourceSpec, tag: &str| -> Result<DeskScene> {
                let s = SceneSpec {
                    sources: std::iter::once(t).chain(noises.clone()).collect(),
                    sir_db: None,
                    ..spec.clone()
                };
                let render = render_scene(&s, catalog, geometry, rir)?;
                Ok(DeskScene {
                    name: format!("pair_{seed:05}_{tag}"),
                    spec: s,
                    mixture: render.mixture,
                    target: render.target,
                })
            };
            Ok(SelectivityPair {
                seed,
                fov: spec.fov.clone(),
                inside: case(talker, "in")?,
                outside: case(moved, "out")?,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectivityScore {
    pub seed: u64,
    pub inside_db: f64,
    pub outside_db: f64,
}

impl SelectivityScore {
    pub fn drop_db(&self) -> f64 {
        self.inside_db - self.outside_db
    }
}

/// Network-stage SI-SDR against the talker's own reverberant image, with the
/// talker inside and outside the pair's FoV.
pub fn score_selectivity(w: &NetworkWeights, pipeline: &Pipeline, pairs: &[SelectivityPair]) -> Result<Vec<SelectivityScore>> {
    pairs
        .iter()
        .map(|p| {
            Ok(SelectivityScore {
                seed: p.seed,
                inside_db: network_si_sdr(w, pipeline, &p.inside.mixture, &p.inside.target, &p.fov)?,
                outside_db: network_si_sdr(w, pipeline, &p.outside.mixture, &p.outside.target, &p.fov)?,
            })
        })
        .collect()
}
