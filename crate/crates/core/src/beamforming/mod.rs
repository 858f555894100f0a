//! Array geometry, steering, diffuse-noise model and fixed beamformer design.

pub mod design;
pub mod geometry;

pub use design::{
    beamform, design_lcmv, design_maxdi, diffuse_coherence, maxdi_weights, mvdr_weights,
    steering_vector, BeamformerBank, DEFAULT_LOADING,
};
pub use geometry::{direction, ArrayGeometry, BlockGrid};
