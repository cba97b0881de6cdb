//! The multi-residual U-Net and its two training modes.

mod model;
mod train;

pub use model::{UNet, UNetConfig, SIZE_MULTIPLE};
pub use train::{
    batch_loss, infer, sc_sample, sif_sample, train_sc, train_sif, write_training_log, EpochLog,
    OptimizerKind, TrainConfig, TrainObjective, TrainOutcome, TrainingSample,
};
