//! Experiment configuration, end-to-end pipelines and artifact files.

mod commands;
mod config;
mod metrics;
mod pipeline;

pub use commands::*;
pub use config::{
    default_budget, CollectionConfig, DataConfig, ExperimentConfig, GcsConfig, PoolConfig,
};
pub use metrics::{
    cost_to_accuracy, metrics_rows, read_metrics_csv, summarize, write_metrics_csv, MetricsRow,
    RunSummary, METRICS_HEADER,
};
pub use pipeline::{
    augment, build_data, build_environment, build_pool, collect, collect_with, random_roster,
    resolve_collector, run_collector, run_gcs, run_policy, train_model, GcsPolicy,
};
