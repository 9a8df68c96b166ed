//! Seeded experiment runner: demonstrations, training, perturbation,
//! assessment and both search engines per repetition, plus CSV/JSON output.

mod config;
mod experiment;
mod output;

pub use config::{DemoConfig, EmConfig, ExperimentConfig, PerturbationSpec};
pub use experiment::{
    aggregate, demos_for, displacement, improve, perturb_and_assess, prepare, run_experiment, run_repetition,
    train_skill, Algo, CompletedRepetition, ExperimentResult, MetricsRow, Prepared, RepetitionOutcome,
    RepetitionResult, RunSummary, TrainedSkill,
};
pub use output::{
    check_output_dir, emit_outputs, read_metrics_csv, write_metrics_csv, ExperimentReport, METRICS_HEADER,
    REPORT_SCHEMA_VERSION,
};
