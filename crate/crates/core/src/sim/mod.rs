//! Scenario harness: configuration, round engine, metrics and sweeps.

pub mod config;
pub mod engine;
pub mod metrics;
pub mod run;
pub mod sampling;

pub use config::{
    AbortPolicy, ArchKind, DataConfig, ModelConfig, PopulationConfig, ProtocolMode, QuantConfig, ScenarioConfig,
};
pub use engine::Simulation;
pub use metrics::{read_metrics, write_metrics, MetricsRow, RoundRecord, CSV_HEADER};
pub use run::{resolve_out, run_scenario, sweep, RunOutput, Summary, BACKDOOR_SUCCESS, OUT_ENV};
pub use sampling::{enforce_fixed_frequency, sample_clients};
