//! Recurrent state space model: latent dynamics, objective, training.

pub mod augment;
pub mod checkpoint;
pub mod loss;
pub mod model;
pub mod tape;
pub mod train;

pub use augment::{augment_batch, AugmentConfig, GridSeq};
pub use loss::{
    kl_balanced_value, kl_diag_value, rssm_loss, rssm_loss_with_grads, KlMode, LossBreakdown,
    LossConfig, LossWeights, SeqSample,
};
pub use model::{LatentState, ModelConfig, RssmModel, STD_FLOOR};
pub use train::{train, Adam, SequenceSource, StepLog, TrainRun, TrainingConfig};
