//! Frame-synchronous enhancement: beamformer bank, features, network gains,
//! then optionally the multi-channel Wiener filter and the post-filter.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::beamforming::{design_maxdi, ArrayGeometry, BeamformerBank, BlockGrid, DEFAULT_LOADING};
use crate::dsp::{ErbFilterbank, MultichannelSpectrum, StftConfig, StftProcessor};
use crate::error::{Error, Result};
use crate::features::{extract_features, fov_to_blocks, FeatureExtractor, FovSpec};
use crate::metrics::si_sdr;
use crate::net::{apply_gain_frame, forward, ErbGain, Mode, NetState, NetworkWeights};
use crate::wiener::{postprocess, WienerConfig, WienerState};

pub const NUM_BANDS: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Stage {
    #[serde(rename = "fovnet")]
    Fovnet,
    #[serde(rename = "fovnet+mcwf")]
    FovnetMcwf,
    #[serde(rename = "fovnet+mcwf+pp")]
    FovnetMcwfPp,
}

impl Stage {
    pub const ALL: [Stage; 3] = [Stage::Fovnet, Stage::FovnetMcwf, Stage::FovnetMcwfPp];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Fovnet => "fovnet",
            Stage::FovnetMcwf => "fovnet+mcwf",
            Stage::FovnetMcwfPp => "fovnet+mcwf+pp",
        }
    }

    /// Row label used in metric tables.
    pub fn label(self) -> &'static str {
        match self {
            Stage::Fovnet => "FoVNet",
            Stage::FovnetMcwf => "FoVNet + MCWF",
            Stage::FovnetMcwfPp => "FoVNet + MCWF + PP",
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s.trim())
            .ok_or_else(|| Error::InvalidConfig(format!("unknown stage '{s}' (fovnet, fovnet+mcwf, fovnet+mcwf+pp)")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EngineConfig {
    pub geometry: Option<std::path::PathBuf>,
    pub weights: Option<std::path::PathBuf>,
    pub fov_deg: (f64, f64),
    pub stage: Stage,
    pub wiener: WienerConfig,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            geometry: None,
            weights: None,
            fov_deg: (-45.0, 27.0),
            stage: Stage::FovnetMcwfPp,
            wiener: WienerConfig::default(),
        }
    }
}

/// Where the per-frame band gains come from.
#[derive(Debug, Clone)]
pub enum GainSource {
    Network(Arc<NetworkWeights>),
    /// All-ones gains (the reference channel passes through).
    Unity,
    /// Precomputed gains, one row per frame (e.g. oracle gains).
    Fixed(Arc<ErbGain>),
}

/// Immutable pieces shared by every engine instance.
#[derive(Debug, Clone)]
pub struct Pipeline {
    pub stft: Arc<StftProcessor<f64>>,
    pub bank: Arc<BeamformerBank>,
    pub fb: Arc<ErbFilterbank>,
}

impl Pipeline {
    pub fn new(bank: BeamformerBank) -> Result<Self> {
        let cfg = *bank.config();
        Ok(Self {
            stft: Arc::new(StftProcessor::new(cfg)?),
            fb: Arc::new(ErbFilterbank::new(&cfg, NUM_BANDS)?),
            bank: Arc::new(bank),
        })
    }

    /// Default STFT and block grid with a maxDI bank for `geometry`.
    pub fn design(geometry: &ArrayGeometry) -> Result<Self> {
        let bank = design_maxdi(geometry, &BlockGrid::default(), &StftConfig::default(), DEFAULT_LOADING)?;
        Self::new(bank)
    }

    pub fn config(&self) -> &StftConfig {
        self.stft.config()
    }

    pub fn num_mics(&self) -> usize {
        self.bank.num_mics()
    }

    pub fn reference_channel(&self) -> usize {
        self.bank.geometry().reference_channel
    }

    /// Algorithmic latency in samples: one hop of input buffering plus the
    /// overlap-add delay.
    pub fn latency_samples(&self) -> usize {
        self.config().frame_size
    }

    /// Offset between an input sample and its copy in the output stream.
    pub fn stream_delay(&self) -> usize {
        self.config().frame_size - self.config().hop
    }
}

/// One hop of output per stage (`None` for stages past the selected one).
#[derive(Debug, Clone, PartialEq)]
pub struct StageBlock {
    pub outputs: [Option<Vec<f64>>; 3],
}

impl StageBlock {
    pub fn get(&self, stage: Stage) -> Option<&[f64]> {
        self.outputs[stage.index()].as_deref()
    }
}

/// Weighted overlap-add with the interior window normalization.
#[derive(Debug, Clone)]
struct Synthesizer {
    tail: Vec<f64>,
    norm: Vec<f64>,
    frame: Vec<f64>,
}

impl Synthesizer {
    fn new(stft: &StftProcessor<f64>) -> Self {
        let cfg = stft.config();
        let w = stft.window();
        let norm = (0..cfg.hop)
            .map(|n| (n..cfg.frame_size).step_by(cfg.hop).map(|j| w[j] * w[j]).sum())
            .collect();
        Self {
            tail: vec![0.0; cfg.frame_size - cfg.hop],
            norm,
            frame: vec![0.0; cfg.frame_size],
        }
    }

    fn push(&mut self, stft: &StftProcessor<f64>, spectrum: &[Complex64], out: &mut [f64]) {
        let hop = stft.config().hop;
        stft.synthesize_frame(spectrum, &mut self.frame);
        for n in 0..hop {
            out[n] = (self.tail[n] + self.frame[n]) / self.norm[n];
        }
        let keep = self.tail.len();
        for n in 0..keep {
            let next = if n + hop < keep { self.tail[n + hop] } else { 0.0 };
            self.tail[n] = next + self.frame[n + hop];
        }
    }
}

/// Wiener and post-filter stages of one frame.
fn refine_frame(
    wiener: &mut WienerState,
    floor: f64,
    x: &[Complex64],
    fovnet: &[Complex64],
    mcwf: &mut [Complex64],
    pp: Option<&mut [Complex64]>,
) -> Result<()> {
    wiener.process(x, fovnet, mcwf)?;
    if let Some(pp) = pp {
        postprocess(fovnet, mcwf, floor, pp);
    }
    Ok(())
}

/// Streaming engine; one per audio stream.
#[derive(Debug, Clone)]
pub struct Engine {
    pipeline: Pipeline,
    gains: GainSource,
    stage: Stage,
    fov: FovSpec,
    net: Option<NetState>,
    wiener: WienerState,
    input: Vec<Vec<f64>>,
    frame_index: usize,
    spectrum: Vec<Complex64>,
    spatial: Vec<f64>,
    reference: Vec<f64>,
    gain: Vec<f64>,
    mask: Vec<f64>,
    stage_spec: [Vec<Complex64>; 3],
    synth: [Synthesizer; 3],
}

impl Engine {
    pub fn new(pipeline: Pipeline, gains: GainSource, fov: FovSpec, stage: Stage, wiener: WienerConfig) -> Result<Self> {
        let cfg = *pipeline.config();
        let (m, f, b) = (pipeline.num_mics(), cfg.num_bins(), pipeline.fb.num_bands());
        let k = pipeline.bank.num_blocks();
        if fov.num_blocks != k {
            return Err(Error::ShapeMismatch(format!("FoV over {} blocks, bank has {k}", fov.num_blocks)));
        }
        let net = match &gains {
            GainSource::Network(w) => {
                let arch = w.arch();
                if arch.input.blocks != k || arch.input.bands != b {
                    return Err(Error::ShapeMismatch(format!(
                        "network expects {}x{} features, pipeline gives {k}x{b}",
                        arch.input.blocks, arch.input.bands
                    )));
                }
                Some(NetState::new(w, &fov)?)
            }
            GainSource::Fixed(g) if g.bands != b => {
                return Err(Error::ShapeMismatch(format!("fixed gains have {} bands", g.bands)))
            }
            _ => None,
        };
        let wiener = WienerState::new(f, m, pipeline.reference_channel(), wiener)?;
        let synth = std::array::from_fn(|_| Synthesizer::new(&pipeline.stft));
        Ok(Self {
            gains,
            stage,
            fov,
            net,
            wiener,
            input: vec![vec![0.0; cfg.frame_size]; m],
            frame_index: 0,
            spectrum: vec![Complex64::default(); f * m],
            spatial: vec![0.0; k * b],
            reference: vec![0.0; b],
            gain: vec![1.0; b],
            mask: vec![0.0; f],
            stage_spec: std::array::from_fn(|_| vec![Complex64::default(); f]),
            synth,
            pipeline,
        })
    }

    /// Engine from a configuration: loads or designs every component.
    pub fn from_config(cfg: &EngineConfig) -> Result<Self> {
        let geometry = match &cfg.geometry {
            Some(p) => ArrayGeometry::load(p)?,
            None => ArrayGeometry::glasses_default(),
        };
        let pipeline = Pipeline::design(&geometry)?;
        let gains = match &cfg.weights {
            Some(p) => GainSource::Network(Arc::new(NetworkWeights::load(p)?)),
            None => return Err(Error::InvalidConfig("engine needs a weights file".into())),
        };
        let fov = fov_to_blocks(pipeline.bank.grid(), cfg.fov_deg.0, cfg.fov_deg.1)?;
        Self::new(pipeline, gains, fov, cfg.stage, cfg.wiener)
    }

    pub fn pipeline(&self) -> &Pipeline {
        &self.pipeline
    }

    pub fn stage(&self) -> Stage {
        self.stage
    }

    pub fn fov(&self) -> &FovSpec {
        &self.fov
    }

    pub fn frames_processed(&self) -> usize {
        self.frame_index
    }

    pub fn latency_samples(&self) -> usize {
        self.pipeline.latency_samples()
    }

    pub fn wiener_warnings(&self) -> usize {
        self.wiener.warnings()
    }

    /// Switches the FoV between frames; recurrent state carries over.
    pub fn set_fov(&mut self, fov: FovSpec) -> Result<()> {
        if fov.num_blocks != self.pipeline.bank.num_blocks() {
            return Err(Error::ShapeMismatch("FoV block count".into()));
        }
        if let Some(net) = &mut self.net {
            net.set_fov(&fov);
        }
        self.fov = fov;
        Ok(())
    }

    fn frame_gain(&mut self, t: usize) -> Result<()> {
        match &self.gains {
            GainSource::Unity => self.gain.fill(1.0),
            GainSource::Fixed(g) => {
                if t >= g.frames {
                    return Err(Error::ShapeMismatch(format!("fixed gains end at frame {}", g.frames)));
                }
                self.gain.copy_from_slice(g.frame(t));
            }
            GainSource::Network(w) => {
                let mut ex = FeatureExtractor::new(&self.pipeline.bank, &self.pipeline.fb)?;
                ex.frame(&self.spectrum, &w.norm, &mut self.spatial, &mut self.reference);
                let net = self.net.as_mut().expect("network state exists for network gains");
                net.step(w, &self.spatial, &self.reference, &mut self.gain);
            }
        }
        Ok(())
    }

    /// Consumes one hop of new samples per channel and returns one hop of
    /// output for every stage up to the selected one.
    pub fn process_block(&mut self, block: &[&[f64]]) -> Result<StageBlock> {
        let cfg = *self.pipeline.config();
        let m = self.pipeline.num_mics();
        if block.len() != m {
            return Err(Error::ShapeMismatch(format!("expected {m} channels, got {}", block.len())));
        }
        if block.iter().any(|c| c.len() != cfg.hop) {
            return Err(Error::ShapeMismatch(format!("every channel needs {} samples", cfg.hop)));
        }
        if block.iter().any(|c| c.iter().any(|v| !v.is_finite())) {
            return Err(Error::NonFinite("input block".into()));
        }
        let f = cfg.num_bins();
        let mut bins = vec![Complex64::default(); f];
        for (ch, (buf, new)) in self.input.iter_mut().zip(block).enumerate() {
            buf.copy_within(cfg.hop.., 0);
            buf[cfg.frame_size - cfg.hop..].copy_from_slice(new);
            self.pipeline.stft.analyze_frame(buf, &mut bins);
            for (i, &v) in bins.iter().enumerate() {
                self.spectrum[i * m + ch] = v;
            }
        }
        let t = self.frame_index;
        self.frame_gain(t)?;
        let r = self.pipeline.reference_channel();
        let [fov_spec, mcwf_spec, pp_spec] = &mut self.stage_spec;
        for (i, v) in fov_spec.iter_mut().enumerate() {
            *v = self.spectrum[i * m + r];
        }
        apply_gain_frame(&self.pipeline.fb, &self.gain, fov_spec, &mut self.mask);
        if self.stage >= Stage::FovnetMcwf {
            let pp = (self.stage == Stage::FovnetMcwfPp).then_some(&mut pp_spec[..]);
            let floor = self.wiener.config().pp_floor;
            refine_frame(&mut self.wiener, floor, &self.spectrum, fov_spec, mcwf_spec, pp)?;
        }
        let mut outputs: [Option<Vec<f64>>; 3] = [None, None, None];
        for s in Stage::ALL.into_iter().filter(|&s| s <= self.stage) {
            let mut out = vec![0.0; cfg.hop];
            self.synth[s.index()].push(&self.pipeline.stft, &self.stage_spec[s.index()], &mut out);
            outputs[s.index()] = Some(out);
        }
        self.frame_index += 1;
        Ok(StageBlock { outputs })
    }

    /// One hop of output for the selected stage.
    pub fn process_frame(&mut self, block: &[&[f64]]) -> Result<Vec<f64>> {
        let mut out = self.process_block(block)?;
        Ok(out.outputs[self.stage.index()].take().expect("selected stage is computed"))
    }
}

/// Streams whole signals through an engine hop by hop; the result is the raw
/// output stream (input sample `n` appears at `n + stream_delay`), one
/// `Vec` per computed stage.
pub fn stream_signals(engine: &mut Engine, signals: &[Vec<f64>], num_blocks: usize) -> Result<Vec<Vec<f64>>> {
    let hop = engine.pipeline.config().hop;
    let m = signals.len();
    let mut outs: Vec<Vec<f64>> = vec![Vec::with_capacity(num_blocks * hop); engine.stage.index() + 1];
    let mut block = vec![vec![0.0; hop]; m];
    for b in 0..num_blocks {
        for (dst, src) in block.iter_mut().zip(signals) {
            for (i, d) in dst.iter_mut().enumerate() {
                *d = src.get(b * hop + i).copied().unwrap_or(0.0);
            }
        }
        let refs: Vec<&[f64]> = block.iter().map(Vec::as_slice).collect();
        let res = engine.process_block(&refs)?;
        for (o, r) in outs.iter_mut().zip(res.outputs.iter()) {
            o.extend_from_slice(r.as_ref().expect("stage computed"));
        }
    }
    Ok(outs)
}

/// Number of hops needed so that every input sample reaches the output.
pub fn blocks_for(len: usize, pipeline: &Pipeline) -> usize {
    let hop = pipeline.config().hop;
    len.div_ceil(hop) + pipeline.stream_delay().div_ceil(hop)
}

/// Stage outputs time-aligned with the input, `len` samples each.
#[derive(Debug, Clone, PartialEq)]
pub struct Enhanced {
    pub stages: Vec<(Stage, Vec<f64>)>,
}

impl Enhanced {
    pub fn get(&self, stage: Stage) -> Option<&[f64]> {
        self.stages.iter().find(|(s, _)| *s == stage).map(|(_, v)| v.as_slice())
    }
}

fn align(stream: Vec<Vec<f64>>, delay: usize, len: usize) -> Enhanced {
    Enhanced {
        stages: stream
            .into_iter()
            .enumerate()
            .map(|(i, s)| (Stage::ALL[i], s[delay..delay + len].to_vec()))
            .collect(),
    }
}

fn check_signals(pipeline: &Pipeline, signals: &[Vec<f64>]) -> Result<usize> {
    if signals.len() != pipeline.num_mics() {
        return Err(Error::ShapeMismatch(format!(
            "expected {} channels, got {}",
            pipeline.num_mics(),
            signals.len()
        )));
    }
    let len = signals[0].len();
    if signals.iter().any(|s| s.len() != len) {
        return Err(Error::ShapeMismatch("channels differ in length".into()));
    }
    Ok(len)
}

/// Streaming enhancement of complete signals, aligned to the input.
pub fn enhance_streaming(engine: &mut Engine, signals: &[Vec<f64>]) -> Result<Enhanced> {
    let len = check_signals(&engine.pipeline, signals)?;
    let blocks = blocks_for(len, &engine.pipeline);
    let stream = stream_signals(engine, signals, blocks)?;
    Ok(align(stream, engine.pipeline.stream_delay(), len))
}

/// Whole-signal path: batch analysis, batch feature extraction and a batch
/// network pass, producing the same raw stream as [`stream_signals`] for
/// `num_blocks` hops.
pub fn batch_signals(
    pipeline: &Pipeline,
    gains: &GainSource,
    fov: &FovSpec,
    stage: Stage,
    wiener: WienerConfig,
    signals: &[Vec<f64>],
    num_blocks: usize,
) -> Result<Vec<Vec<f64>>> {
    check_signals(pipeline, signals)?;
    let cfg = *pipeline.config();
    let hop = cfg.hop;
    // Front hop of zeros, as in the streaming input buffer.
    let padded: Vec<Vec<f64>> = signals
        .iter()
        .map(|s| {
            let mut p = vec![0.0; cfg.frame_size - hop];
            p.extend((0..num_blocks * hop).map(|i| s.get(i).copied().unwrap_or(0.0)));
            p
        })
        .collect();
    let x = MultichannelSpectrum::from_signals(&padded, &pipeline.stft)?;
    let frames = x.frames();
    debug_assert_eq!(frames, num_blocks);
    let (f, m, b) = (cfg.num_bins(), pipeline.num_mics(), pipeline.fb.num_bands());
    let gain = match gains {
        GainSource::Network(w) => {
            let feats = extract_features(&x, &pipeline.bank, &pipeline.fb, &w.norm)?;
            forward(&feats, fov, w, Mode::Infer)?.0
        }
        GainSource::Unity => ErbGain {
            data: vec![1.0; frames * b],
            frames,
            bands: b,
        },
        GainSource::Fixed(g) => {
            if g.frames < frames {
                return Err(Error::ShapeMismatch(format!("fixed gains end at frame {}", g.frames)));
            }
            (**g).clone()
        }
    };
    let mut wiener = WienerState::new(f, m, pipeline.reference_channel(), wiener)?;
    let r = pipeline.reference_channel();
    let mut synth: Vec<Synthesizer> = (0..=stage.index()).map(|_| Synthesizer::new(&pipeline.stft)).collect();
    let mut outs = vec![Vec::with_capacity(frames * hop); stage.index() + 1];
    let mut spec: [Vec<Complex64>; 3] = std::array::from_fn(|_| vec![Complex64::default(); f]);
    let mut mask = vec![0.0; f];
    let mut hop_out = vec![0.0; hop];
    for t in 0..frames {
        let xt = x.frame(t);
        let [fov_spec, mcwf_spec, pp_spec] = &mut spec;
        for (i, v) in fov_spec.iter_mut().enumerate() {
            *v = xt[i * m + r];
        }
        apply_gain_frame(&pipeline.fb, gain.frame(t), fov_spec, &mut mask);
        if stage >= Stage::FovnetMcwf {
            let pp = (stage == Stage::FovnetMcwfPp).then_some(&mut pp_spec[..]);
            let floor = wiener.config().pp_floor;
            refine_frame(&mut wiener, floor, xt, fov_spec, mcwf_spec, pp)?;
        }
        for (s, (syn, out)) in synth.iter_mut().zip(outs.iter_mut()).enumerate() {
            syn.push(&pipeline.stft, &spec[s], &mut hop_out);
            out.extend_from_slice(&hop_out);
        }
    }
    Ok(outs)
}

/// Batch enhancement of complete signals, aligned to the input.
pub fn enhance_batch(
    pipeline: &Pipeline,
    gains: &GainSource,
    fov: &FovSpec,
    stage: Stage,
    wiener: WienerConfig,
    signals: &[Vec<f64>],
) -> Result<Enhanced> {
    let len = check_signals(pipeline, signals)?;
    let blocks = blocks_for(len, pipeline);
    let stream = batch_signals(pipeline, gains, fov, stage, wiener, signals, blocks)?;
    Ok(align(stream, pipeline.stream_delay(), len))
}

/// Ideal band gains sqrt(E_target / E_mixture), clipped to [0, 1], on the
/// same framing as the engine.
pub fn oracle_gains(pipeline: &Pipeline, mixture_ref: &[f64], target: &[f64]) -> Result<ErbGain> {
    if mixture_ref.len() != target.len() {
        return Err(Error::ShapeMismatch("mixture and target lengths differ".into()));
    }
    let cfg = *pipeline.config();
    let hop = cfg.hop;
    let blocks = mixture_ref.len().div_ceil(hop) + pipeline.stream_delay().div_ceil(hop);
    let frame_pad = |s: &[f64]| {
        let mut p = vec![0.0; cfg.frame_size - hop];
        p.extend((0..blocks * hop).map(|i| s.get(i).copied().unwrap_or(0.0)));
        p
    };
    let xs = pipeline.stft.stft(&frame_pad(mixture_ref))?;
    let ys = pipeline.stft.stft(&frame_pad(target))?;
    let fb = &pipeline.fb;
    let (frames, bands) = (xs.frames(), fb.num_bands());
    let mut data = Vec::with_capacity(frames * bands);
    for t in 0..frames {
        let (x, y) = (xs.frame(t), ys.frame(t));
        for band in 0..bands {
            let (mut ex, mut ey) = (0.0, 0.0);
            for bin in 0..fb.num_bins() {
                let w = fb.band_weight(band, bin);
                ex += w * x[bin].norm_sqr();
                ey += w * y[bin].norm_sqr();
            }
            data.push(if ex > 0.0 { (ey / ex).sqrt().min(1.0) } else { 1.0 });
        }
    }
    Ok(ErbGain { data, frames, bands })
}

/// SI-SDR of the noisy reference and of every stage against the target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageScores {
    pub noisy_db: f64,
    pub stages: Vec<(Stage, f64)>,
}

pub fn score_stages(mixture_ref: &[f64], target: &[f64], enhanced: &Enhanced) -> Result<StageScores> {
    Ok(StageScores {
        noisy_db: si_sdr(mixture_ref, target)?,
        stages: enhanced
            .stages
            .iter()
            .map(|(s, y)| Ok((*s, si_sdr(y, target)?)))
            .collect::<Result<_>>()?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::ArchConfig;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn pipeline() -> Pipeline {
        Pipeline::design(&ArrayGeometry::glasses_default()).unwrap()
    }

    fn noise(seed: u64, m: usize, len: usize) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..m).map(|_| (0..len).map(|_| rng.gen_range(-0.5..0.5)).collect()).collect()
    }

    fn fov(p: &Pipeline) -> FovSpec {
        fov_to_blocks(p.bank.grid(), -45.0, 27.0).unwrap()
    }

    fn network() -> GainSource {
        GainSource::Network(Arc::new(NetworkWeights::init(&ArchConfig::shipped(), 3).unwrap()))
    }

    #[test]
    fn stage_names_round_trip() {
        for s in Stage::ALL {
            assert_eq!(s.name().parse::<Stage>().unwrap(), s);
        }
        assert!("mcwf".parse::<Stage>().is_err());
    }

    #[test]
    fn unity_gain_passes_the_reference_through() {
        let p = pipeline();
        let x = noise(1, 5, 3000);
        let mut e = Engine::new(p.clone(), GainSource::Unity, fov(&p), Stage::Fovnet, WienerConfig::default()).unwrap();
        let out = enhance_streaming(&mut e, &x).unwrap();
        let y = out.get(Stage::Fovnet).unwrap();
        let r = p.reference_channel();
        let err = y.iter().zip(&x[r]).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn streaming_and_batch_are_bit_identical() {
        let p = pipeline();
        let x = noise(2, 5, 4000);
        let g = network();
        let f = fov(&p);
        let mut e = Engine::new(p.clone(), g.clone(), f.clone(), Stage::FovnetMcwfPp, WienerConfig::default()).unwrap();
        let s = enhance_streaming(&mut e, &x).unwrap();
        let b = enhance_batch(&p, &g, &f, Stage::FovnetMcwfPp, WienerConfig::default(), &x).unwrap();
        assert_eq!(s, b);
        assert_eq!(s.stages.len(), 3);
    }

    #[test]
    fn nothing_is_emitted_before_the_impulse_arrives() {
        let p = pipeline();
        let hop = p.config().hop;
        let s = 37 * hop + 50;
        let mut x = vec![vec![0.0; 60 * hop]; 5];
        for ch in &mut x {
            ch[s] = 1.0;
        }
        let mut e = Engine::new(p.clone(), network(), fov(&p), Stage::FovnetMcwfPp, WienerConfig::default()).unwrap();
        let stream = stream_signals(&mut e, &x, 60).unwrap();
        for out in &stream {
            let first = out.iter().position(|v| *v != 0.0).unwrap();
            // emitted at the end of the call that produced it
            let emitted_at = (first / hop + 1) * hop;
            assert!(emitted_at > s);
        }
    }

    #[test]
    fn measured_latency_is_one_frame() {
        let p = pipeline();
        let hop = p.config().hop;
        let s = 20 * hop;
        let mut x = vec![vec![0.0; 40 * hop]; 5];
        x[p.reference_channel()][s] = 1.0;
        let mut e = Engine::new(p.clone(), GainSource::Unity, fov(&p), Stage::Fovnet, WienerConfig::default()).unwrap();
        let out = &stream_signals(&mut e, &x, 40).unwrap()[0];
        let peak = out
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
            .unwrap()
            .0;
        assert_eq!(peak, s + p.stream_delay());
        assert_eq!((peak / hop + 1) * hop - s, e.latency_samples());
        assert_eq!(e.latency_samples(), 256);
    }

    #[test]
    fn channel_mismatch_is_rejected() {
        let p = pipeline();
        let mut e = Engine::new(p.clone(), GainSource::Unity, fov(&p), Stage::Fovnet, WienerConfig::default()).unwrap();
        let z = vec![0.0; 128];
        assert!(matches!(e.process_frame(&[&z, &z]), Err(Error::ShapeMismatch(_))));
        assert!(matches!(e.process_frame(&[&z[..100]; 5]), Err(Error::ShapeMismatch(_))));
        let mut bad = z.clone();
        bad[3] = f64::NAN;
        assert!(matches!(e.process_frame(&[&bad, &z, &z, &z, &z]), Err(Error::NonFinite(_))));
    }

    #[test]
    fn oracle_gains_on_a_clean_signal_hit_the_metric_cap() {
        let p = pipeline();
        let x = noise(4, 5, 3200);
        let r = p.reference_channel();
        let g = GainSource::Fixed(Arc::new(oracle_gains(&p, &x[r], &x[r]).unwrap()));
        let mut e = Engine::new(p.clone(), g, fov(&p), Stage::Fovnet, WienerConfig::default()).unwrap();
        let out = enhance_streaming(&mut e, &x).unwrap();
        let scores = score_stages(&x[r], &x[r], &out).unwrap();
        assert_eq!(scores.stages[0].1, 60.0);
    }

    #[test]
    fn fov_switch_changes_the_output() {
        let p = pipeline();
        let x = noise(5, 5, 2560);
        let mut w = NetworkWeights::init(&ArchConfig::shipped(), 3).unwrap();
        w.get_mut("emb.out_sigma").unwrap().fill(0.2);
        let g = GainSource::Network(Arc::new(w));
        let mut a = Engine::new(p.clone(), g, fov(&p), Stage::Fovnet, WienerConfig::default()).unwrap();
        let mut b = a.clone();
        b.set_fov(fov_to_blocks(p.bank.grid(), 100.0, 170.0).unwrap()).unwrap();
        let ya = enhance_streaming(&mut a, &x).unwrap();
        let yb = enhance_streaming(&mut b, &x).unwrap();
        assert_ne!(ya, yb);
    }
}
