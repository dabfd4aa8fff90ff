//! Segmentation metrics and spectral class separability.

mod metrics;
mod separability;

pub use metrics::{
    confusion, inverse_frequency_weights, metrics, Aggregate, ClassMetrics, ConfusionMatrix,
    MetricsReport,
};
pub use separability::{
    bhattacharyya, class_stats, default_epsilon, jm_csv, jm_distance, jm_matrix, ClassStats,
};
