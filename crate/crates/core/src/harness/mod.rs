//! Experiment configuration, scenario sampling, and Monte Carlo batches.

mod batch;
mod config;
mod sample;

use thiserror::Error;

use crate::metrics::MetricsError;
use crate::sim::SimError;

pub use batch::{
    emit_histograms, histogram, metric_value, run_batch, run_one, BatchMode, BatchSummary, Bin,
    ControllerAggregate, RunRecord, Stat, METRICS,
};
pub use config::{
    CbfSection, FaultSection, FifoSection, NetworkSection, RunSection, ScenarioConfig, TrafficSection,
};
pub use sample::{
    four_vehicle_labels, four_vehicle_scenario, radius_for_mass, run_rng, sample_fault_scenario,
    sample_scenario, scenario_hash, FOUR_VEHICLE_H1_S,
};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("empty metric series: {0}")]
    EmptySeries(String),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
