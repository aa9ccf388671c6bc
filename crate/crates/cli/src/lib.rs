//! Scenario files, batch sweeps, episode export and the planner benchmark
//! behind the `canal` binary.

pub mod batch;
pub mod bench;
pub mod config;
pub mod export;

pub use batch::{
    aggregate, run_batch, AggregateReport, BatchError, BatchOutcome, ExperimentSpec, MetricsRow, ModeAggregate,
    RunRecord,
};
pub use bench::{benchmark, BenchmarkReport};
pub use config::{parse_scenario, parse_scenario_str, scenario_to_toml, ConfigError};
pub use export::{episode_rows, export_episode, import_csv, import_records, EpisodeRow, ExportFormat, COLUMNS};
