//! Windowed batching, the Adam training loop, recovery evaluation and the
//! run-directory artifacts.

mod adam;
mod batch;
mod config;
mod eval;
mod run;
mod train;

pub use adam::Adam;
pub use batch::{make_batches, window_starts, Batch};
pub use config::{CoefficientPooling, TrainConfig};
pub use eval::{evaluate, evaluate_model, EvalReport};
pub use run::{files, loss_csv, write_run_dir, Checkpoint, Dimensions, CHECKPOINT_FORMAT};
pub use train::{train, window_loss, RecoveredModel, Standardizer, DIVERGED_LOSS};
