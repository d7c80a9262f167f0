//! Alignment, metrics and significance testing of predicted trajectories.

pub mod dtw;
pub mod metrics;
pub mod stats;

pub use dtw::{align_by_path, dtw, euclidean, DtwResult};
pub use metrics::{
    cc, compensated_sum, evaluate_sentence, framewise_metrics, mean, metrics_csv, pearson, rmse,
    sample_std, summarize, CorpusSummary, MetricReport, METRICS_HEADER,
};
pub use stats::{
    duration_significance, significance_csv, welch_t_test, PhonemeSignificance, WelchResult,
    SIGNIFICANCE_HEADER,
};
