//! Signal-processing primitives shared by every stage.

pub mod erb;
pub mod multichannel;
pub mod stft;
pub mod wav;

pub use erb::{erb_analyze, erb_gain_to_mask, ErbFilterbank};
pub use multichannel::MultichannelSpectrum;
pub use stft::{istft, pad_signal, stft, Spectrogram, StftConfig, StftProcessor, Window};
