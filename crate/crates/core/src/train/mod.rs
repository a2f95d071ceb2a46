//! Loss, the training loop with early stopping, and checkpoint files.

pub mod checkpoint;
mod engine;
pub mod loss;

pub use checkpoint::{Checkpoint, CheckpointMeta};
pub use engine::{
    evaluate_split, predict, train, train_step, Control, Dataset, EarlyStopping, EpochRecord, History, Monitor,
    PhaseSummary, StopReason, TrainConfig, TrainOutcome,
};
pub use loss::{cross_entropy_from_logits, cross_entropy_loss, LossAndGrad};
