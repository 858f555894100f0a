//! The FoV-conditioned gain network.

pub mod arch;
pub mod complexity;
pub mod gradcheck;
mod layers;
pub mod loss;
pub mod model;
pub mod train;
pub mod weights;

pub use arch::ArchConfig;
pub use complexity::{count_complexity, BankDims, Complexity};
pub use loss::{loss, loss_terms, loss_with_grad, LossConfig, LossTerms};
pub use model::{apply_gain, apply_gain_frame, backward, forward, fuse_fov, update_running_stats, BnRecalibration, ErbGain, ForwardCache, Mode, NetState};
pub use weights::{Gradients, NetworkWeights, Param};
pub use train::{
    enhance_example, evaluate_examples, example_loss_and_grad, recalibrate_batchnorm, train_desk, Adam, EpochStats,
    TrainConfig, TrainReport, TrainingExample,
};
