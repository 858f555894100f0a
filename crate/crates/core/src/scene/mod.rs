//! Simulated training and evaluation scenes.

pub mod catalog;
pub mod dataset;
pub mod render;
pub mod rir;
pub mod sampler;

pub use catalog::{Catalog, ClipKind, ClipSource};
pub use dataset::{generate_dataset, load_dataset, load_scene, write_scene, DatasetIndex, LoadedScene, SceneManifest};
pub use render::{mic_positions, mix_images, render_scene, source_images, SceneRender};
pub use rir::{simulate_rir, RirConfig, RoomSpec};
pub use sampler::{check_scene, sample_scene, ArrayPose, SamplerConfig, SceneSpec, SourceRole, SourceSpec};
