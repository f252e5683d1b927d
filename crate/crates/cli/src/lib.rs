//! Scenario runner for `moesim`: reads a TOML scenario, runs its sweep in
//! parallel and writes per-point metric tables plus a JSON summary.

pub mod compare;
pub mod config;
pub mod error;
pub mod run;

pub use compare::{compare_modes, write_comparison_csv, Comparison, COMPARISON_CSV_HEADER};
pub use config::{ScenarioConfig, SCHEMA_VERSION};
pub use error::CliError;
pub use run::{
    run_scenario, sweep_points, PointStats, PointStatus, RunOptions, Summary, SummaryRow, SweepPoint, SUMMARY_FILE,
};
