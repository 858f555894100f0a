//! Desk-scale training: example preparation, the differentiable enhancement
//! chain (gain -> mask -> ISTFT -> loss), Adam, and the epoch loop.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::loss::{loss_with_grad, LossConfig, LossTerms};
use super::model::{backward, forward, update_running_stats, BnRecalibration, ErbGain, ForwardCache, Mode};
use super::weights::{Gradients, NetworkWeights};
use crate::beamforming::BeamformerBank;
use crate::dsp::{pad_signal, ErbFilterbank, MultichannelSpectrum, Spectrogram, StftProcessor};
use crate::error::{Error, Result};
use crate::features::{extract_features, FeatureTensor, FovSpec, NormStats};
use crate::metrics::si_sdr;

/// A scene prepared for training: framing uses the streaming alignment of
/// [`pad_signal`].
#[derive(Debug, Clone)]
pub struct TrainingExample {
    pub features: FeatureTensor,
    pub fov: FovSpec,
    pub x_ref: Spectrogram,
    /// Target at the reference microphone, unpadded.
    pub target: Vec<f64>,
    /// Noisy reference channel, unpadded.
    pub noisy_ref: Vec<f64>,
}

impl TrainingExample {
    pub fn prepare(
        mixture: &[Vec<f64>],
        target: &[f64],
        fov: FovSpec,
        bank: &BeamformerBank,
        fb: &ErbFilterbank,
        stats: &NormStats,
    ) -> Result<Self> {
        let r = bank.geometry().reference_channel;
        let noisy_ref = mixture
            .get(r)
            .ok_or_else(|| Error::ShapeMismatch(format!("mixture lacks reference channel {r}")))?
            .clone();
        if noisy_ref.len() != target.len() {
            return Err(Error::ShapeMismatch(format!(
                "mixture has {} samples, target {}",
                noisy_ref.len(),
                target.len()
            )));
        }
        let stft = StftProcessor::new(*bank.config())?;
        let padded: Vec<Vec<f64>> = mixture.iter().map(|c| pad_signal(c, bank.config())).collect();
        let x = MultichannelSpectrum::from_signals(&padded, &stft)?;
        let features = extract_features(&x, bank, fb, stats)?;
        Ok(Self {
            features,
            fov,
            x_ref: x.channel(r),
            target: target.to_vec(),
            noisy_ref,
        })
    }

    pub fn len(&self) -> usize {
        self.target.len()
    }

    pub fn is_empty(&self) -> bool {
        self.target.is_empty()
    }
}

/// Masked reference spectrum resynthesized and cropped to the unpadded span.
fn synthesize(stft: &StftProcessor<f64>, fb: &ErbFilterbank, gain: &ErbGain, ex: &TrainingExample) -> Result<Vec<f64>> {
    let masked = super::model::apply_gain(gain, &ex.x_ref, fb)?;
    let full = stft.istft(&masked)?;
    let hop = stft.config().hop;
    Ok(full[hop..hop + ex.len()].to_vec())
}

/// Network-stage enhancement of a prepared example.
pub fn enhance_example(w: &NetworkWeights, ex: &TrainingExample, fb: &ErbFilterbank, mode: Mode) -> Result<Vec<f64>> {
    let stft = StftProcessor::new(*ex.x_ref.config())?;
    let (gain, _) = forward(&ex.features, &ex.fov, w, mode)?;
    synthesize(&stft, fb, &gain, ex)
}

/// Loss of one example and its gradient accumulated into `grads`.
pub fn example_loss_and_grad(
    w: &NetworkWeights,
    ex: &TrainingExample,
    fb: &ErbFilterbank,
    cfg: &LossConfig,
    grads: &mut Gradients,
) -> Result<(LossTerms, ForwardCache)> {
    let stft = StftProcessor::new(cfg.stft)?;
    let (gain, cache) = forward(&ex.features, &ex.fov, w, Mode::Train)?;
    let cache = cache.expect("training mode records a cache");
    let estimate = synthesize(&stft, fb, &gain, ex)?;
    let (terms, d_est) = loss_with_grad(&estimate, &ex.target, cfg)?;

    let hop = cfg.stft.hop;
    let frames = gain.frames;
    let mut d_full = vec![0.0; (frames - 1) * hop + cfg.stft.frame_size];
    d_full[hop..hop + ex.len()].copy_from_slice(&d_est);
    let d_spec = stft.istft_adjoint(&d_full, frames);

    let (f, b) = (fb.num_bins(), fb.num_bands());
    let mut d_gain = vec![0.0; frames * b];
    let mut d_mask = vec![0.0; f];
    for t in 0..frames {
        let x = ex.x_ref.frame(t);
        for ((dm, g), xv) in d_mask.iter_mut().zip(d_spec.frame(t)).zip(x) {
            *dm = (g.conj() * xv).re;
        }
        fb.expand_frame_backward(gain.frame(t), &d_mask, &mut d_gain[t * b..(t + 1) * b]);
    }
    backward(w, &cache, &d_gain, grads)?;
    Ok((terms, cache))
}

#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step: i32,
}

impl Adam {
    pub fn new(w: &NetworkWeights, lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        let zeros: Vec<Vec<f64>> = w.params().iter().map(|p| vec![0.0; p.data.len()]).collect();
        Self {
            lr,
            beta1,
            beta2,
            eps,
            m: zeros.clone(),
            v: zeros,
            step: 0,
        }
    }

    /// Updates every learnable tensor of `w` in place.
    pub fn step(&mut self, w: &mut NetworkWeights, g: &Gradients) {
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        for (i, p) in w.params_mut().iter_mut().enumerate() {
            if !p.trainable {
                continue;
            }
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (j, x) in p.data.iter_mut().enumerate() {
                let gj = g.tensors[i][j];
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * gj;
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * gj * gj;
                *x -= self.lr * (m[j] / c1) / ((v[j] / c2).sqrt() + self.eps);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
    pub shuffle: bool,
    /// Replace running batchnorm statistics with dataset averages at the end.
    pub recalibrate_bn: bool,
    pub loss: LossConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            lr: 2e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            seed: 0,
            shuffle: true,
            recalibrate_bn: true,
            loss: LossConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_loss: f64,
    pub mean_si_sdr_db: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainReport {
    pub epochs: Vec<EpochStats>,
}

impl TrainReport {
    pub fn first_loss(&self) -> Option<f64> {
        self.epochs.first().map(|e| e.mean_loss)
    }

    pub fn final_loss(&self) -> Option<f64> {
        self.epochs.last().map(|e| e.mean_loss)
    }
}

/// Runs `epochs` passes of per-example Adam updates. Deterministic for a
/// given seed. Aborts with [`Error::Diverged`] on a non-finite loss or gradient.
pub fn train_desk(
    w: &mut NetworkWeights,
    examples: &[TrainingExample],
    fb: &ErbFilterbank,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochStats),
) -> Result<TrainReport> {
    if examples.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(w, cfg.lr, cfg.beta1, cfg.beta2, cfg.eps);
    let mut grads = Gradients::zeros_like(w);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut report = TrainReport::default();
    for epoch in 1..=cfg.epochs {
        if cfg.shuffle {
            order.shuffle(&mut rng);
        }
        let (mut loss_sum, mut sdr_sum) = (0.0, 0.0);
        for (step, &i) in order.iter().enumerate() {
            grads.fill_zero();
            let (terms, cache) = example_loss_and_grad(w, &examples[i], fb, &cfg.loss, &mut grads)?;
            if !terms.total.is_finite() || !grads.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    step,
                    loss: terms.total,
                });
            }
            update_running_stats(w, &cache);
            adam.step(w, &grads);
            loss_sum += terms.total;
            sdr_sum += terms.si_sdr_db;
        }
        let n = examples.len() as f64;
        let stats = EpochStats {
            epoch,
            mean_loss: loss_sum / n,
            mean_si_sdr_db: sdr_sum / n,
        };
        log::debug!("epoch {epoch}: loss {:.4}, si-sdr {:.2} dB", stats.mean_loss, stats.mean_si_sdr_db);
        on_epoch(&stats);
        report.epochs.push(stats);
    }
    if cfg.recalibrate_bn {
        recalibrate_batchnorm(w, examples)?;
    }
    Ok(report)
}

/// Sets running batchnorm statistics to the average batch statistics over
/// `examples`.
pub fn recalibrate_batchnorm(w: &mut NetworkWeights, examples: &[TrainingExample]) -> Result<()> {
    let mut acc = BnRecalibration::new();
    for ex in examples {
        let (_, cache) = forward(&ex.features, &ex.fov, w, Mode::Train)?;
        acc.add(&cache.expect("training mode records a cache"));
    }
    acc.apply(w);
    Ok(())
}

/// Mean SI-SDR (dB) of the network-stage output and of the noisy reference.
pub fn evaluate_examples(w: &NetworkWeights, examples: &[TrainingExample], fb: &ErbFilterbank) -> Result<(f64, f64)> {
    let (mut enh, mut noisy) = (0.0, 0.0);
    for ex in examples {
        enh += si_sdr(&enhance_example(w, ex, fb, Mode::Infer)?, &ex.target)?;
        noisy += si_sdr(&ex.noisy_ref, &ex.target)?;
    }
    let n = examples.len().max(1) as f64;
    Ok((enh / n, noisy / n))
}
