//! The optimization loop: schedules, clipping, checkpoints and orchestration.

pub mod checkpoint;
mod config;
pub mod optim;
pub mod run;
pub mod schedule;
pub mod step;

pub use checkpoint::{checkpoint_path, latest_checkpoint, load_checkpoint, param_hash, save_checkpoint};
pub use config::{LossMode, TrainConfig};
pub use run::{evaluate, load_dataset, render_view, sweep_views, train, SweepArm, TrainOptions, TrainSummary};
pub use schedule::{cons_weight_at, lr_at};
pub use step::{is_consistency_step, train_step, TrainContext, TrainState};
