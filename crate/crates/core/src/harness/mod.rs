//! Scenario configuration, the simulation driver, metrics, and the
//! capacity, privacy and wire-size reports.

mod capacity;
mod config;
mod log;
mod metrics;
mod privacy;
mod sim;
mod wire;

pub use capacity::{capacity_report, reference_cache, CapacityReport, SearchCostModel};
pub use config::{
    AdversaryEntry, AreaConfig, ConfigError, CryptoConfig, LbsConfig, PlacementConfig,
    PolicyConfig, ProtocolConfig, RequestModelConfig, ScenarioConfig, WorkloadConfig,
};
pub use log::{EventLog, LogRecord};
pub use metrics::{percentile, MetricsRecord};
pub use privacy::{privacy_report, AuthorityLinkage, EavesdropperView, LbsView, PrivacyReport};
pub use sim::{pseudonym_owners, run_scenario, stream_seed, RunOutput, SimError, Simulation};
pub use wire::{decode_query, encode_query, reference_query, WireError};
