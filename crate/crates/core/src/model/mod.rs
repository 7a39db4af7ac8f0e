//! Trainable conditional behavior prediction model.

pub mod checkpoint;
pub mod features;
pub mod loss;
pub mod mlp;
pub mod predictor;
pub mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_SCHEMA};
pub use features::ConditionalQuery;
pub use loss::{nll_loss, overlap_loss, OverlapGrads};
pub use predictor::{forward, predict, ModelConfig, PredictorParams};
pub use train::{scene_training_loss, train, EpochLog, TrainConfig, TrainLog};
