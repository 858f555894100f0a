//! Central finite-difference checks of the analytic gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::loss::{loss, loss_with_grad, LossConfig};
use super::model::{backward, forward, Mode};
use super::train::{example_loss_and_grad, TrainingExample};
use super::weights::{Gradients, NetworkWeights};
use super::ArchConfig;
use crate::beamforming::BlockGrid;
use crate::dsp::{pad_signal, ErbFilterbank, MultichannelSpectrum, StftProcessor};
use crate::beamforming::BeamformerBank;
use crate::error::Result;
use crate::features::{compute_norm_stats, FeatureTensor, FovSpec};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheck {
    pub name: String,
    pub checked: usize,
    pub max_rel_err: f64,
}

impl GradCheck {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_err <= tol
    }
}

pub fn rel_err(fd: f64, analytic: f64) -> f64 {
    (fd - analytic).abs() / fd.abs().max(analytic.abs()).max(1e-6)
}

/// Initial weights with randomized embeddings and running statistics, so
/// every branch of the network carries signal.
pub fn perturbed_weights(arch: &ArchConfig, seed: u64) -> Result<NetworkWeights> {
    let mut w = NetworkWeights::init(arch, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(100));
    for p in w.params_mut() {
        if p.name.ends_with("running_var") || p.name.ends_with("_sigma") || p.name.ends_with("gamma") {
            p.data.iter_mut().for_each(|v| *v = rng.gen_range(0.5..1.5));
        } else if p.name.ends_with("running_mean") || p.name.ends_with("_mu") || p.name.ends_with("beta") {
            p.data.iter_mut().for_each(|v| *v = rng.gen_range(-0.3..0.3));
        }
    }
    Ok(w)
}

pub fn random_features(arch: &ArchConfig, frames: usize, seed: u64) -> FeatureTensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (k, b) = (arch.input.blocks, arch.input.bands);
    FeatureTensor {
        spatial: (0..frames * k * b).map(|_| rng.gen_range(-1.5..1.5)).collect(),
        reference: (0..frames * b).map(|_| rng.gen_range(-1.5..1.5)).collect(),
        frames,
        blocks: k,
        bands: b,
    }
}

/// Every learnable tensor of the network (embeddings, depthwise and
/// pointwise convolutions, batchnorm, causal conv1d, GRU, head) against a
/// random linear functional of the gains. `per_tensor` entries are probed
/// in each tensor.
pub fn check_network(arch: &ArchConfig, frames: usize, per_tensor: usize, seed: u64) -> Result<Vec<GradCheck>> {
    let mut w = perturbed_weights(arch, seed)?;
    let f = random_features(arch, frames, seed + 1);
    let grid = BlockGrid::new(arch.input.blocks)?;
    let first = arch.input.blocks / 3;
    let fov = FovSpec::from_block_run(&grid, first, (arch.input.blocks / 4).max(1))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 2);
    let probe: Vec<f64> = (0..frames * arch.input.bands).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let probe_loss = |w: &NetworkWeights| -> Result<f64> {
        let (g, _) = forward(&f, &fov, w, Mode::Train)?;
        Ok(g.data.iter().zip(&probe).map(|(a, b)| a * b).sum())
    };
    let (_, cache) = forward(&f, &fov, &w, Mode::Train)?;
    let mut grads = Gradients::zeros_like(&w);
    backward(&w, &cache.expect("train mode caches"), &probe, &mut grads)?;
    let h = 1e-6;
    let mut out = Vec::new();
    for pi in 0..w.params().len() {
        if !w.params()[pi].trainable {
            continue;
        }
        let name = w.params()[pi].name.clone();
        let n = w.params()[pi].data.len();
        let mut worst: f64 = 0.0;
        for _ in 0..per_tensor {
            let i = rng.gen_range(0..n);
            let orig = w.params()[pi].data[i];
            w.params_mut()[pi].data[i] = orig + h;
            let up = probe_loss(&w)?;
            w.params_mut()[pi].data[i] = orig - h;
            let dn = probe_loss(&w)?;
            w.params_mut()[pi].data[i] = orig;
            worst = worst.max(rel_err((up - dn) / (2.0 * h), grads.tensors[pi][i]));
        }
        out.push(GradCheck {
            name,
            checked: per_tensor,
            max_rel_err: worst,
        });
    }
    Ok(out)
}

/// The training loss with respect to the estimate signal.
pub fn check_loss(len: usize, samples: usize, seed: u64) -> Result<GradCheck> {
    let cfg = LossConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let target: Vec<f64> = (0..len).map(|n| (n as f64 * 0.031).sin() + rng.gen_range(-0.2..0.2)).collect();
    let mut est: Vec<f64> = target.iter().map(|v| 0.7 * v + rng.gen_range(-0.3..0.3)).collect();
    let (_, grad) = loss_with_grad(&est, &target, &cfg)?;
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for _ in 0..samples {
        let i = rng.gen_range(0..len);
        let orig = est[i];
        est[i] = orig + h;
        let up = loss(&est, &target, &cfg)?;
        est[i] = orig - h;
        let dn = loss(&est, &target, &cfg)?;
        est[i] = orig;
        worst = worst.max(rel_err((up - dn) / (2.0 * h), grad[i]));
    }
    Ok(GradCheck {
        name: "loss".into(),
        checked: samples,
        max_rel_err: worst,
    })
}

/// Loss through resynthesis, masking, band expansion and the network, for a
/// noisy tone scene of `len` samples.
pub fn check_full_chain(
    bank: &BeamformerBank,
    fb: &ErbFilterbank,
    arch: &ArchConfig,
    len: usize,
    per_tensor: usize,
    seed: u64,
) -> Result<Vec<GradCheck>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = bank.num_mics();
    let target: Vec<f64> = (0..len).map(|n| (n as f64 * 0.05).sin() * 0.5).collect();
    let mixture: Vec<Vec<f64>> = (0..m)
        .map(|c| {
            let scale = if c == bank.geometry().reference_channel { 1.0 } else { 0.9 };
            target.iter().map(|t| t * scale + rng.gen_range(-0.3..0.3)).collect()
        })
        .collect();
    let stft = StftProcessor::new(*bank.config())?;
    let padded: Vec<Vec<f64>> = mixture.iter().map(|c| pad_signal(c, bank.config())).collect();
    let stats = compute_norm_stats([&MultichannelSpectrum::from_signals(&padded, &stft)?], bank, fb)?;
    let fov = FovSpec::from_block_run(bank.grid(), bank.num_blocks() / 2 - 2, 3)?;
    let ex = TrainingExample::prepare(&mixture, &target, fov, bank, fb, &stats)?;
    let mut w = NetworkWeights::init(arch, seed)?;
    let cfg = LossConfig::default();
    let mut grads = Gradients::zeros_like(&w);
    example_loss_and_grad(&w, &ex, fb, &cfg, &mut grads)?;
    let loss_at = |w: &NetworkWeights| -> Result<f64> {
        let mut scratch = Gradients::zeros_like(w);
        Ok(example_loss_and_grad(w, &ex, fb, &cfg, &mut scratch)?.0.total)
    };
    // Larger step: the chain loss is a long sum and roundoff dominates below this.
    let h = 1e-4;
    let mut out = Vec::new();
    for pi in 0..w.params().len() {
        if !w.params()[pi].trainable {
            continue;
        }
        let name = w.params()[pi].name.clone();
        let n = w.params()[pi].data.len();
        let mut worst: f64 = 0.0;
        for _ in 0..per_tensor {
            let i = rng.gen_range(0..n);
            let orig = w.params()[pi].data[i];
            w.params_mut()[pi].data[i] = orig + h;
            let up = loss_at(&w)?;
            w.params_mut()[pi].data[i] = orig - h;
            let dn = loss_at(&w)?;
            w.params_mut()[pi].data[i] = orig;
            worst = worst.max(rel_err((up - dn) / (2.0 * h), grads.tensors[pi][i]));
        }
        out.push(GradCheck {
            name: format!("chain:{name}"),
            checked: per_tensor,
            max_rel_err: worst,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::beamforming::{design_maxdi, ArrayGeometry, DEFAULT_LOADING};
    use crate::dsp::StftConfig;

    #[test]
    fn network_and_loss_checks_pass() {
        let arch = ArchConfig::shipped();
        for c in check_network(&arch, 6, 2, 1).unwrap() {
            assert!(c.passes(1e-3), "{c:?}");
        }
        assert!(check_loss(700, 10, 2).unwrap().passes(1e-3));
    }

    #[test]
    fn chain_check_passes_on_a_short_scene() {
        let cfg = StftConfig::default();
        let bank = design_maxdi(&ArrayGeometry::glasses_default(), &BlockGrid::default(), &cfg, DEFAULT_LOADING).unwrap();
        let fb = ErbFilterbank::new(&cfg, 64).unwrap();
        let checks = check_full_chain(&bank, &fb, &ArchConfig::shipped(), 800, 1, 4).unwrap();
        for c in checks {
            assert!(c.passes(1e-3), "{c:?}");
        }
    }
}
