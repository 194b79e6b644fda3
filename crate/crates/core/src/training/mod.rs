//! Optimization, prediction rules, metrics and α sweeps.

mod adam;
mod evaluate;
mod metrics;
mod sweep;
mod train;

pub use adam::{adam_step, AdamState, BETA1, BETA2, EPSILON};
pub use evaluate::{evaluate, AttentionTrace, Evaluation, LevelMetrics};
pub use metrics::{
    auc, binary_metrics, predict_bag, predict_instances, total_variation, BinaryMetrics,
};
pub use sweep::{
    sweep_alpha, AggregateRow, LevelSummary, Summary, SweepConfig, SweepResult, SweepRun,
    SWEEP_CSV_HEADER,
};
pub use train::{derive_seed, train, EarlyStopMetric, EpochRecord, RunReport, TrainConfig};
