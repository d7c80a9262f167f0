//! Optimization, learning-rate schedule and experiment drivers.

pub mod config;
pub mod experiment;
pub mod loss;
pub mod optim;
pub mod trainer;

pub use config::TrainConfig;
pub use experiment::{
    checkpoint_path, evaluate_model, run_experiment, summary_csv, write_reports, DurationEval,
    Evaluation, ExperimentPlan, ExperimentResult, Setup, SubjectResult, POOLED, SUMMARY_HEADER,
};
pub use loss::{eval_loss, sentence_loss, BatchSize};
pub use optim::{clip_grad_norm, Adam, PlateauScheduler};
pub use trainer::{fit, log_csv, train_epoch, EpochLog, TrainOutcome, LOG_HEADER};
