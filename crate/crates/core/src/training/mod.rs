//! SGD training, learning-rate schedule, augmentation and ablations.

mod ablation;
mod augment;
mod config;
mod optim;
mod trainer;

pub use ablation::{run_ablation, AblationAxis, AblationRow, AblationTable};
pub use augment::{apply_augmentation, augment, draw_augmentation, Augmentation};
pub use config::TrainConfig;
pub use optim::{lr_at, sgd_step, OptimizerState};
pub use trainer::{evaluate, make_batch, train, Batch, EvalRecord, IterRecord, TrainSummary, BEST_CHECKPOINT, EVAL_LOG, LAST_CHECKPOINT, TRAIN_LOG};
