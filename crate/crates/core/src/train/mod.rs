//! Two-stage training, optimizers and Dice evaluation.

mod checkpointing;
mod config;
mod dice;
mod engine;
mod optim;

pub use checkpointing::{build_checkpoint, load_model, save_checkpoint, InferenceSettings, LoadedModel};
pub use config::{loss_weights, stage, LossWeights, OptimizerKind, TrainConfig};
pub use dice::{dice, dice_report, pooled_dice_report, DiceReport};
pub use engine::{train, validate, BestSnapshot, EpochLosses, EpochRecord, Event, StepRecord, TrainOutcome, TrainState, Validation};
pub use optim::{Optimizer, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};
