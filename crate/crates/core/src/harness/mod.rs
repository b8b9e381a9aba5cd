//! Workloads, experiments, oracle verification and saved state.

pub mod config;
pub mod experiment;
pub mod oracle;
pub mod scenario;
pub mod snapshot;
pub mod thwn;
pub mod workload;

pub use config::ExperimentConfig;
pub use experiment::{run_experiment, Experiment, MetricsRow, Summary};
pub use oracle::{verify_against_oracle, OracleMap, Report};
pub use workload::{gen_workload, Distribution, WorkloadKind, WorkloadSpec};
