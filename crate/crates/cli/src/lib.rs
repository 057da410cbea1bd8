//! Experiment harness around `dedpul-core`: TOML configs in, JSON reports
//! and CSV curves out.

pub mod config;
pub mod run;

pub use config::{ConfigError, ExperimentConfig, Source, SweepConfig};
pub use run::{CellReport, CellStatus, EstimateReport, MethodRun, RunError, RunRecord, SweepReport};
