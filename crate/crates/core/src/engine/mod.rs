//! Event loop, cost model and metrics.

mod build;
mod config;
mod cost;
mod events;
mod metrics;
mod sim;
mod step;

pub use build::{synthetic_scenario, WorkloadSpec};
pub use config::{EngineConfig, Mode, DEFAULT_FREQUENCY_PRIOR_WEIGHT, DEFAULT_INVOCATION_PERIOD};
pub use cost::{CostModel, MIXTRAL_FULL_TRANSFER_SECS, OPENMOE_FULL_TRANSFER_SECS};
pub use events::{write_events_csv, Event, EventKind, EVENT_CSV_HEADER};
pub use metrics::{collect_metrics, percentile, Metrics, MetricsSummary, RequestMetrics, REQUEST_CSV_HEADER};
pub use sim::{run, RunOutput, Scenario};
pub use step::{iteration_step, StepContext, StepOutcome};
