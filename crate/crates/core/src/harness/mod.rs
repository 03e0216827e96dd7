//! Experiment orchestration: configuration, datasets, the distillation loop,
//! metrics files and multi-seed comparisons.

mod compare;
mod config;
mod data;
mod experiment;
mod metrics;

pub use compare::{
    ablate, ablation_variants, compare, mean_std, ComparisonReport, VariantResult, REPORT_COLUMNS,
};
pub use config::{BlobSpec, ControllerKind, DatasetSpec, ExperimentConfig};
pub use data::{
    generate_blobs, load_dataset, min_max_scale, read_csv, read_idx_pair, split, Dataset,
};
pub use experiment::{
    load_model, obtain_teacher, prepare_data, run_experiment, run_with_teacher, streams,
    BatchEvent, RunAudit, RunOutcome,
};
pub use metrics::{format_g6, EpochMetrics, MetricsWriter, METRICS_HEADER};
