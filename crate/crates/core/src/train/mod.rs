//! Optimizers, the training loop, evaluation metrics and checkpoints.

mod checkpoint;
mod evaluate;
mod metrics;
mod optim;
mod trainer;

pub use self::checkpoint::{
    decode, encode, load_checkpoint, peek_architecture, save_checkpoint, MAGIC, VERSION,
};
pub use self::evaluate::{
    argmax, evaluate, evaluate_split, predict_samples, Prediction, EVAL_BATCH,
};
pub use self::metrics::{metrics_from_cm, ConfusionMatrix, EvalReport, Metrics, UndefinedFlags};
pub use self::optim::{adam_step, sgd_step, AdamParams, Optimizer, OptimizerKind};
pub use self::trainer::{
    train, train_with, EpochRecord, History, StepOutcome, TrainConfig, TrainOutcome, Trainer,
};
