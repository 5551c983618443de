//! Config-driven experiments: training runs, noise sweeps, GDP ensembles,
//! ablations and comparisons, written as deterministic CSV/JSON reports.
//!
//! Every command trains its models in a bounded worker pool; results are
//! gathered in input order, so the worker count never changes an output byte.

mod commands;
mod config;
mod report;
mod train;

pub use commands::{
    ablation, checkpoint_name, compare, gdp_study, run, sweep, train_runs, AblationReport, Command,
    CompareAxis, CompareReport, GdpStudy, SweepReport, TrainReport,
};
pub use config::{AugmentConfig, ExperimentConfig, GdpConfig, LrSchedule, TrainingConfig};
pub use report::{
    find_summary, fmt_f64, fmt_opt, manifest_file, summarize, write_artifacts, AccuracyRecord,
    Artifact, FileDigest, RunManifest, SummaryRecord,
};
pub use train::{evaluate, noisy_split, train_model, EpochLog, Evaluation, TrainOutcome};
