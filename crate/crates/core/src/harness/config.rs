//! Scenario configuration (TOML). Every table rejects unknown keys, and
//! validation errors name the offending key.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adversary::{AdversaryKind, AdversaryStrategy};
use crate::credentials::CredentialPolicy;
use crate::crypto::{CostProfile, CostProfiles, SchemeId};
use crate::lbs::{AccessMode, ResponseMode};
use crate::netsim::{Area, PoiWeight, RadioModel, RequestModel, TargetReading};
use crate::node::{LbsCredentialMode, NodeParams};
use crate::types::SimTime;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{0}")]
    Parse(String),
    #[error("invalid `{key}`: {msg}")]
    Invalid { key: String, msg: String },
    #[error("cannot read {path}: {msg}")]
    Io { path: String, msg: String },
}

fn invalid(key: &str, msg: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        key: key.to_string(),
        msg: msg.into(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default)]
    pub seed: u64,
    pub duration_s: f64,
    /// Log every reception (accepted queries and drops), not just sends.
    #[serde(default)]
    pub verbose_log: bool,
    #[serde(default)]
    pub area: AreaConfig,
    #[serde(default)]
    pub placement: PlacementConfig,
    #[serde(default)]
    pub radio: RadioModel,
    #[serde(default)]
    pub workload: WorkloadConfig,
    #[serde(default)]
    pub protocol: ProtocolConfig,
    #[serde(default)]
    pub policy: PolicyConfig,
    #[serde(default)]
    pub crypto: CryptoConfig,
    #[serde(default)]
    pub lbs: LbsConfig,
    #[serde(default)]
    pub adversaries: Vec<AdversaryEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AreaConfig {
    pub width_m: f64,
    pub height_m: f64,
    #[serde(default)]
    pub torus: bool,
}

impl Default for AreaConfig {
    fn default() -> Self {
        AreaConfig {
            width_m: 1000.0,
            height_m: 1000.0,
            torus: false,
        }
    }
}

impl AreaConfig {
    pub fn area(&self) -> Area {
        Area {
            width_m: self.width_m,
            height_m: self.height_m,
            torus: self.torus,
        }
    }
}

/// Exactly one of `density_per_km2`, `nodes`, `positions`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlacementConfig {
    pub density_per_km2: Option<f64>,
    pub nodes: Option<usize>,
    pub positions: Option<Vec<[f64; 2]>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case", tag = "mode")]
pub enum RequestModelConfig {
    SelfOnly,
    Weighted {
        weights: Vec<f64>,
        #[serde(default = "default_scale")]
        distance_scale_m: f64,
    },
}

fn default_scale() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkloadConfig {
    /// Needs per node per minute; 0 leaves the run to scripted needs.
    pub rate_per_min: f64,
    pub poi_types: Vec<PoiWeight>,
    #[serde(default = "default_request_model")]
    pub request_model: RequestModelConfig,
    #[serde(default)]
    pub target_reading: TargetReading,
}

fn default_request_model() -> RequestModelConfig {
    RequestModelConfig::SelfOnly
}

impl Default for WorkloadConfig {
    fn default() -> Self {
        WorkloadConfig {
            rate_per_min: 1.0,
            poi_types: (0..4)
                .map(|t| PoiWeight {
                    poi_type: t,
                    weight: 1.0,
                })
                .collect(),
            request_model: RequestModelConfig::SelfOnly,
            target_reading: TargetReading::PeerTarget,
        }
    }
}

impl WorkloadConfig {
    pub fn request_model(&self) -> RequestModel {
        match &self.request_model {
            RequestModelConfig::SelfOnly => RequestModel::SelfOnly,
            RequestModelConfig::Weighted {
                weights,
                distance_scale_m,
            } => RequestModel::Weighted {
                weights: weights.clone(),
                distance_scale_m: *distance_scale_m,
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProtocolConfig {
    pub wanted_responses: u8,
    pub timeout_s: f64,
    pub quota: u32,
    pub freshness_s: f64,
    pub min_results: usize,
    pub radius_m: u16,
    /// Defaults to half the timeout.
    pub backoff_max_s: Option<f64>,
    pub cache_capacity: usize,
    pub pseudonym_cache: bool,
    pub attach_pc_every: u32,
    pub popular_caching: bool,
    pub popularity_window: usize,
    pub popularity_threshold: f64,
    pub backoff: bool,
    pub serve_peer_origin: bool,
    pub p2p: bool,
    pub lbs_credential: LbsCredentialMode,
    pub lbs_fallback: bool,
    pub report_quota: bool,
    pub report_contradictions: bool,
    /// Nodes that audit every peer answer against the LBS.
    pub detectors: Vec<usize>,
    /// Preload each cache with every POI its own needs could ask for.
    pub warm_cache: bool,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        let p = NodeParams::default();
        ProtocolConfig {
            wanted_responses: p.wanted_responses,
            timeout_s: p.timeout.as_secs_f64(),
            quota: p.quota,
            freshness_s: p.freshness.as_secs_f64(),
            min_results: p.min_results,
            radius_m: p.radius_m,
            backoff_max_s: None,
            cache_capacity: p.cache_capacity,
            pseudonym_cache: p.pseudonym_cache,
            attach_pc_every: p.attach_pc_every,
            popular_caching: p.popular_caching,
            popularity_window: p.popularity_window,
            popularity_threshold: p.popularity_threshold,
            backoff: p.backoff,
            serve_peer_origin: p.serve_peer_origin,
            p2p: p.p2p,
            lbs_credential: p.lbs_credential,
            lbs_fallback: p.lbs_fallback,
            report_quota: p.report_quota,
            report_contradictions: p.report_contradictions,
            detectors: Vec::new(),
            warm_cache: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PolicyConfig {
    pub ticket_duration_s: f64,
    pub issuance_grid_s: f64,
    pub pseudonym_lifetime_s: f64,
    /// Pseudonyms requested per ticket; defaults to the number that tiles a ticket.
    pub batch_size: Option<usize>,
    pub revoke_on_resolution: bool,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        PolicyConfig {
            ticket_duration_s: 600.0,
            issuance_grid_s: 60.0,
            pseudonym_lifetime_s: 600.0,
            batch_size: None,
            revoke_on_resolution: true,
        }
    }
}

impl PolicyConfig {
    pub fn credential_policy(&self) -> CredentialPolicy {
        CredentialPolicy {
            ticket_duration: SimTime::from_secs_f64(self.ticket_duration_s),
            issuance_grid: SimTime::from_secs_f64(self.issuance_grid_s),
            pseudonym_lifetime: SimTime::from_secs_f64(self.pseudonym_lifetime_s),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CryptoConfig {
    pub node_long_term: SchemeId,
    pub node_short_term: SchemeId,
    pub authority: SchemeId,
    pub lbs: SchemeId,
    /// Multiplies every modeled cost, for hardware other than the reference handset.
    pub cost_scale: f64,
    /// Per-scheme overrides, keyed by scheme name.
    pub profiles: BTreeMap<String, CostProfile>,
}

impl Default for CryptoConfig {
    fn default() -> Self {
        CryptoConfig {
            node_long_term: SchemeId::ModelRsa1024,
            node_short_term: SchemeId::ModelRsa1024,
            authority: SchemeId::ModelRsa2048,
            lbs: SchemeId::ModelRsa2048,
            cost_scale: 1.0,
            profiles: BTreeMap::new(),
        }
    }
}

impl CryptoConfig {
    pub fn cost_profiles(&self) -> Result<CostProfiles, ConfigError> {
        if !(self.cost_scale >= 0.0 && self.cost_scale.is_finite()) {
            return Err(invalid(
                "crypto.cost_scale",
                "must be a finite non-negative number",
            ));
        }
        let mut profiles = CostProfiles::scaled(self.cost_scale);
        for (name, p) in &self.profiles {
            let key = format!("crypto.profiles.{name}");
            let scheme: SchemeId = name.parse().map_err(|e| invalid(&key, format!("{e}")))?;
            profiles
                .set(scheme, *p)
                .map_err(|e| invalid(&key, format!("{e}")))?;
        }
        Ok(profiles)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LbsConfig {
    pub response_mode: ResponseMode,
    pub access: AccessMode,
    pub reachable: bool,
    /// Generated POIs per type, scattered uniformly over the area.
    pub pois_per_type: usize,
    /// Load the database from a file instead of generating it.
    pub poi_file: Option<String>,
}

impl Default for LbsConfig {
    fn default() -> Self {
        LbsConfig {
            response_mode: ResponseMode::Signed,
            access: AccessMode::Open,
            reachable: true,
            pois_per_type: 50,
            poi_file: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdversaryEntry {
    pub node: usize,
    pub kind: AdversaryKind,
    pub clog_rate_per_min: Option<f64>,
    pub replay_delay_s: Option<f64>,
    pub max_captures: Option<usize>,
    pub bogus_payload: Option<String>,
    #[serde(default)]
    pub coalition: bool,
}

impl AdversaryEntry {
    pub fn strategy(&self) -> AdversaryStrategy {
        let mut s = AdversaryStrategy::new(self.kind);
        if let Some(r) = self.clog_rate_per_min {
            s.clog_rate_per_min = r;
        }
        if let Some(d) = self.replay_delay_s {
            s.replay_delay_s = d;
        }
        if let Some(m) = self.max_captures {
            s.max_captures = m;
        }
        if let Some(p) = &self.bogus_payload {
            s.bogus_payload = p.clone();
        }
        s.coalition = self.coalition;
        s
    }
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: ScenarioConfig =
            toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
            path: path.display().to_string(),
            msg: e.to_string(),
        })?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn duration(&self) -> SimTime {
        SimTime::from_secs_f64(self.duration_s)
    }

    /// Number of nodes the placement will produce.
    pub fn node_count(&self) -> usize {
        let p = &self.placement;
        if let Some(pos) = &p.positions {
            pos.len()
        } else if let Some(n) = p.nodes {
            n
        } else {
            (p.density_per_km2.unwrap_or(0.0) * self.area.area().km2()).round() as usize
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let positive = |key: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(invalid(key, format!("must be positive, got {v}")))
            }
        };
        positive("duration_s", self.duration_s)?;
        positive("area.width_m", self.area.width_m)?;
        positive("area.height_m", self.area.height_m)?;
        let p = &self.placement;
        let chosen = [
            p.density_per_km2.is_some(),
            p.nodes.is_some(),
            p.positions.is_some(),
        ]
        .iter()
        .filter(|b| **b)
        .count();
        if chosen != 1 {
            return Err(invalid(
                "placement",
                "set exactly one of density_per_km2, nodes, positions",
            ));
        }
        if let Some(d) = p.density_per_km2 {
            positive("placement.density_per_km2", d)?;
        }
        if let Some(pos) = &p.positions {
            let area = self.area.area();
            if let Some(i) = pos
                .iter()
                .position(|[x, y]| !area.contains(&crate::types::Point::new(*x, *y)))
            {
                return Err(invalid(
                    &format!("placement.positions[{i}]"),
                    "outside the area",
                ));
            }
        }
        if self.node_count() == 0 {
            return Err(invalid("placement", "no nodes"));
        }
        positive("radio.range_m", self.radio.range_m)?;
        if self.radio.propagation_delay_ms.is_nan() || self.radio.propagation_delay_ms < 0.0 {
            return Err(invalid(
                "radio.propagation_delay_ms",
                "must be non-negative",
            ));
        }
        if !(0.0..=1.0).contains(&self.radio.loss_probability) {
            return Err(invalid("radio.loss_probability", "must lie in [0, 1]"));
        }
        if !(self.workload.rate_per_min >= 0.0 && self.workload.rate_per_min.is_finite()) {
            return Err(invalid(
                "workload.rate_per_min",
                "must be a finite non-negative number",
            ));
        }
        if self.workload.poi_types.is_empty()
            || self.workload.poi_types.iter().all(|w| w.weight <= 0.0)
        {
            return Err(invalid(
                "workload.poi_types",
                "need at least one type with positive weight",
            ));
        }
        if self
            .workload
            .poi_types
            .iter()
            .any(|w| w.weight.is_nan() || w.weight < 0.0)
        {
            return Err(invalid(
                "workload.poi_types",
                "weights must be non-negative",
            ));
        }
        self.workload
            .request_model()
            .validate(self.node_count())
            .map_err(|e| invalid("workload.request_model", e.to_string()))?;
        let pr = &self.protocol;
        if pr.wanted_responses == 0 {
            return Err(invalid("protocol.wanted_responses", "must be at least 1"));
        }
        positive("protocol.timeout_s", pr.timeout_s)?;
        if pr.quota == 0 {
            return Err(invalid("protocol.quota", "must be at least 1"));
        }
        positive("protocol.freshness_s", pr.freshness_s)?;
        if let Some(b) = pr.backoff_max_s {
            if b.is_nan() || b < 0.0 {
                return Err(invalid("protocol.backoff_max_s", "must be non-negative"));
            }
        }
        if pr.attach_pc_every == 0 {
            return Err(invalid("protocol.attach_pc_every", "must be at least 1"));
        }
        if !(0.0..=1.0).contains(&pr.popularity_threshold) {
            return Err(invalid(
                "protocol.popularity_threshold",
                "must lie in [0, 1]",
            ));
        }
        let n = self.node_count();
        if let Some(d) = pr.detectors.iter().find(|d| **d >= n) {
            return Err(invalid(
                "protocol.detectors",
                format!("node {d} does not exist"),
            ));
        }
        self.policy
            .credential_policy()
            .validate()
            .map_err(|e| invalid("policy", e.to_string()))?;
        if self.policy.batch_size == Some(0) {
            return Err(invalid("policy.batch_size", "must be at least 1"));
        }
        self.crypto.cost_profiles()?;
        for (i, a) in self.adversaries.iter().enumerate() {
            if a.node >= n {
                return Err(invalid(
                    &format!("adversaries[{i}].node"),
                    format!("node {} does not exist", a.node),
                ));
            }
            if let Some(r) = a.clog_rate_per_min {
                positive(&format!("adversaries[{i}].clog_rate_per_min"), r)?;
            }
        }
        Ok(())
    }

    pub fn node_params(&self) -> NodeParams {
        let pr = &self.protocol;
        let timeout = SimTime::from_secs_f64(pr.timeout_s);
        NodeParams {
            wanted_responses: pr.wanted_responses,
            timeout,
            quota: pr.quota,
            freshness: SimTime::from_secs_f64(pr.freshness_s),
            min_results: pr.min_results,
            radius_m: pr.radius_m,
            backoff_max: pr
                .backoff_max_s
                .map(SimTime::from_secs_f64)
                .unwrap_or(SimTime(timeout.as_micros() / 2)),
            cache_capacity: pr.cache_capacity,
            cache_cell_m: 250.0,
            pseudonym_cache: pr.pseudonym_cache,
            attach_pc_every: pr.attach_pc_every,
            popular_caching: pr.popular_caching,
            popularity_window: pr.popularity_window,
            popularity_threshold: pr.popularity_threshold,
            backoff: pr.backoff,
            serve_peer_origin: pr.serve_peer_origin,
            p2p: pr.p2p,
            lbs_credential: pr.lbs_credential,
            lbs_fallback: pr.lbs_fallback,
            self_limit: true,
            report_quota: pr.report_quota,
            report_contradictions: pr.report_contradictions,
            long_term_scheme: self.crypto.node_long_term,
            short_term_scheme: self.crypto.node_short_term,
            batch_size: self
                .policy
                .batch_size
                .unwrap_or_else(|| self.policy.credential_policy().batch_size()),
        }
    }
}
