//! Parameter and multiply-accumulate accounting.
//!
//! Convention: one MAC per real multiply-add in convolutions (full kernel,
//! padded taps included), GRU matrix products and the head; a complex MAC in
//! the beamformer bank counts as four real MACs. Activations, batchnorm,
//! gate nonlinearities, FFTs and ERB analysis are not counted.

use serde::Serialize;

use super::arch::ArchConfig;
use super::weights::NetworkWeights;

/// Size of the fixed beamformer bank applied per frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct BankDims {
    pub blocks: usize,
    pub bins: usize,
    pub mics: usize,
}

impl Default for BankDims {
    fn default() -> Self {
        Self {
            blocks: 20,
            bins: 129,
            mics: 5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Complexity {
    /// Learnable scalars (running batchnorm statistics excluded).
    pub params: usize,
    pub spatial_macs: usize,
    pub reference_macs: usize,
    pub gru_macs: usize,
    pub head_macs: usize,
    pub bank_macs: usize,
    pub frame_rate: f64,
}

impl Complexity {
    pub fn network_macs_per_frame(&self) -> usize {
        self.spatial_macs + self.reference_macs + self.gru_macs + self.head_macs
    }

    pub fn macs_per_frame(&self) -> usize {
        self.network_macs_per_frame() + self.bank_macs
    }

    pub fn mmacs(&self) -> f64 {
        self.macs_per_frame() as f64 * self.frame_rate / 1e6
    }

    pub fn params_millions(&self) -> f64 {
        self.params as f64 / 1e6
    }
}

pub fn count_complexity(arch: &ArchConfig, bank: BankDims, frame_rate: f64) -> Complexity {
    let spatial_macs = arch
        .spatial_layers()
        .iter()
        .map(|s| s.w_out * s.c_in * (s.kernel_time * s.kernel_space + s.c_out))
        .sum();
    let reference_macs = arch
        .reference_layers()
        .iter()
        .map(|r| r.c_in * r.kernel * r.c_out)
        .sum();
    let h = arch.gru.hidden;
    let gru_macs = (0..arch.gru.layers).map(|l| 3 * (arch.gru_input(l) + h) * h).sum();
    let params = arch
        .param_shapes()
        .iter()
        .filter(|(_, _, trainable)| *trainable)
        .map(|(_, s, _)| s.iter().product::<usize>())
        .sum();
    Complexity {
        params,
        spatial_macs,
        reference_macs,
        gru_macs,
        head_macs: h * arch.head.outputs,
        bank_macs: 4 * bank.blocks * bank.bins * bank.mics,
        frame_rate,
    }
}

impl NetworkWeights {
    pub fn complexity(&self, bank: BankDims, frame_rate: f64) -> Complexity {
        count_complexity(self.arch(), bank, frame_rate)
    }
}
