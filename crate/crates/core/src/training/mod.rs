//! Objective, optimizer, schedule and the training loop.

pub mod adam;
mod fit;
pub mod loss;
pub mod schedule;

pub use adam::{optimizer_step, AdamConfig, OptimizerState, WeightDecay};
pub use fit::{eval, fit, fit_from, history_csv, EpochRecord, FitOutput, TrainConfig};
pub use loss::masked_l2_loss;
pub use schedule::MultiStepSchedule;

/// Learning rate at `epoch` under `config`'s multi-step schedule.
pub fn lr_at(epoch: usize, config: &TrainConfig) -> f64 {
    config.schedule().lr_at(epoch)
}
