//! Field-of-view conditioned multi-channel speech enhancement.
//!
//! The pipeline runs a fixed bank of maxDI beamformers around the azimuth
//! circle, summarizes every beam and the reference microphone in 64 ERB
//! bands, and lets a small convolutional-recurrent network estimate band
//! gains for whatever talkers sit inside the configured field of view. The
//! masked reference channel optionally seeds a recursive multi-channel Wiener
//! filter and a min-magnitude post-filter.

pub mod dsp;
pub mod engine;
pub mod error;

pub use error::{Error, Result};
pub mod beamforming;
pub mod container;
pub mod desk;
pub mod features;
pub mod metrics;
pub mod net;
pub mod scene;
pub mod wiener;
