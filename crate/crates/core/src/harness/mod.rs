//! Configuration, checkpoints, experiment orchestration, reports and the
//! command-line front end.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod experiment;
pub mod report;

pub use checkpoint::{load_checkpoint, load_codec, load_denoiser, load_eve, save_checkpoint, Model, ModelKind};
pub use config::{CheckpointPaths, CodecJob, DenoiserJob, EveJob, ExperimentConfig, Scenario, ScheduleSpec, SnrMode};
pub use experiment::{run_baseline, run_case_a, run_case_b, run_experiment, EvalSet, Models};
pub use report::{emit_report, read_metrics, MetricsRecord, ReportFiles, Status, Verdict};

/// Build identification written to reports.
pub const VERSION: &str = concat!("semshield ", env!("CARGO_PKG_VERSION"));
