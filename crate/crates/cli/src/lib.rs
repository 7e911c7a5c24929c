//! Scenario runner for `lgindex-core`: reads a JSON scenario, runs the checks
//! of one module pipeline and emits a report.

pub mod config;
pub mod report;
pub mod scenarios;

pub use config::{ConfigError, Mode, ScenarioConfig, ScenarioKind};
pub use report::{emit_report, OutputFormat, RunReport};
pub use scenarios::{run_scenario, RunOptions};
