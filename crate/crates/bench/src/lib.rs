//! Experiment sweeps over the simulated pipeline and CSV tables of the
//! resulting success counts, throughput, latency and merge time.

mod experiment;
mod tables;

pub use experiment::{
    median, median_block_merge_ms, run_experiment, run_point, ExperimentSpec, MetricsReport,
    PointMetrics, Sweep, SweepParam, EXPERIMENTS,
};
pub use tables::{emit_tables, parse_tables, table_path, METRICS};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("unknown experiment {0:?}; expected one of {list} or a TOML file", list = EXPERIMENTS.join(", "))]
    UnknownExperiment(String),
    #[error("invalid experiment: {0}")]
    InvalidSpec(String),
    #[error("experiment file: {0}")]
    SpecFile(#[from] toml::de::Error),
    #[error("counts differ between repetitions: {0}")]
    Nondeterministic(String),
    #[error("malformed table: {0}")]
    Table(String),
    #[error(transparent)]
    Workload(#[from] crdtsim_core::workload::WorkloadError),
    #[error(transparent)]
    Pipeline(#[from] crdtsim_core::PipelineError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
