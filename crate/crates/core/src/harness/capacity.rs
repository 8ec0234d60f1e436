//! Analytic verification and response budgets from the cost table, set
//! against the query load a scenario offers each node.

use std::fmt;
use std::sync::Arc;

use serde::Serialize;

use super::config::{ConfigError, ScenarioConfig};
use super::wire::{encode_query, reference_query};
use crate::credentials::PseudonymCertificate;
use crate::crypto::{PublicKey, SchemeId, Signature};
use crate::lbs::Poi;
use crate::node::{NodeCache, Origin, PcRef, PoiRecord};
use crate::types::{PoiType, Point, SimTime};

/// Handset cost of a cache search, linear in records scanned and matched.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SearchCostModel {
    pub base_ms: f64,
    pub per_record_ms: f64,
    pub per_match_ms: f64,
}

impl Default for SearchCostModel {
    fn default() -> Self {
        SearchCostModel {
            base_ms: 2.0,
            per_record_ms: 0.005,
            per_match_ms: 0.02,
        }
    }
}

impl SearchCostModel {
    pub fn cost_ms(&self, records: usize, matches: usize) -> f64 {
        self.base_ms + self.per_record_ms * records as f64 + self.per_match_ms * matches as f64
    }
}

/// Cache of 50 records in which a query for type 1 within 500 m of the
/// origin matches exactly 5.
pub fn reference_cache() -> NodeCache {
    let mut cache = NodeCache::new(64, 250.0);
    for i in 0..50u32 {
        let (poi_type, location) = if i < 5 {
            (PoiType(1), Point::new(100.0 * i as f64, 50.0))
        } else if i < 25 {
            (PoiType(1), Point::new(800.0 + 10.0 * i as f64, 900.0))
        } else {
            (PoiType(2), Point::new(10.0 * i as f64, 40.0))
        };
        let poi = Poi {
            id: i,
            location: location.quantized(),
            poi_type,
            payload: Arc::from(format!("poi-{i}").into_bytes()),
        };
        cache.insert(
            PoiRecord {
                poi,
                fetched_at: SimTime::ZERO,
                origin: Origin::Lbs,
            },
            &|_| false,
        );
    }
    cache
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CapacityReport {
    pub node_scheme: SchemeId,
    pub authority_scheme: SchemeId,
    /// Message signature only; the PC came from the pseudonym cache.
    pub verify_cached_ms: f64,
    /// Message signature plus the PCA signature on an attached PC.
    pub verify_uncached_ms: f64,
    /// `None` when the path costs nothing, i.e. it is not crypto-bound.
    pub verifies_per_s_cached: Option<f64>,
    pub verifies_per_s_uncached: Option<f64>,
    pub cache_records: usize,
    pub cache_matches: usize,
    pub search_ms: f64,
    pub response_generation_ms: f64,
    pub responses_per_s: Option<f64>,
    /// Bytes of a query with its PC attached, in the JSON envelope.
    pub query_wire_bytes: usize,
    pub expected_neighbors: f64,
    /// Peer queries a node hears per second at the configured density and rate.
    pub offered_query_rate_per_s: f64,
    /// Share of one core spent verifying the offered load on the uncached path.
    pub verify_utilization: f64,
}

fn per_second(ms: f64) -> Option<f64> {
    (ms > 0.0).then(|| 1000.0 / ms)
}

fn query_wire_bytes(
    node: SchemeId,
    authority: SchemeId,
    sizes: impl Fn(SchemeId) -> (usize, usize),
) -> usize {
    let mut q = reference_query();
    let (sig_len, pk_len) = sizes(node);
    let (ca_sig_len, _) = sizes(authority);
    let serial = q.pc.serial();
    let window = match &q.pc {
        PcRef::Attached(pc) => pc.window,
        PcRef::Serial(_) => unreachable!("reference query carries its PC"),
    };
    let pk_len = if node == SchemeId::Ed25519 {
        32
    } else {
        pk_len.max(32)
    };
    q.signature = Signature::from_bytes(node, vec![0x5a; sig_len]);
    q.pc = PcRef::Attached(Arc::new(PseudonymCertificate {
        serial,
        public: PublicKey::from_bytes(node, vec![0xa5; pk_len]).expect("sized for the scheme"),
        window,
        issuer_signature: Signature::from_bytes(authority, vec![0x3c; ca_sig_len]),
    }));
    encode_query(&q).len()
}

pub fn capacity_report(
    config: &ScenarioConfig,
    search: &SearchCostModel,
) -> Result<CapacityReport, ConfigError> {
    let profiles = config.crypto.cost_profiles()?;
    let node = config.crypto.node_short_term;
    let authority = config.crypto.authority;
    let p = |s: SchemeId| *profiles.get(s).expect("profile for every scheme");
    let verify_cached_ms = p(node).verify_ms;
    let verify_uncached_ms = verify_cached_ms + p(authority).verify_ms;

    let mut cache = reference_cache();
    let matches = cache
        .search(PoiType(1), &Point::new(0.0, 0.0), 500.0, true)
        .len();
    let records = cache.len();
    let search_ms = search.cost_ms(records, matches);
    let response_generation_ms = search_ms + p(node).sign_ms;

    let area = config.area.area();
    let n = config.node_count() as f64;
    let range_km = config.radio.range_m / 1000.0;
    let disc = std::f64::consts::PI * range_km * range_km;
    let others = if config.placement.density_per_km2.is_some() {
        n
    } else {
        (n - 1.0).max(0.0)
    };
    let expected_neighbors = others / area.km2() * disc;
    let offered = expected_neighbors * config.workload.rate_per_min / 60.0;

    Ok(CapacityReport {
        node_scheme: node,
        authority_scheme: authority,
        verify_cached_ms,
        verify_uncached_ms,
        verifies_per_s_cached: per_second(verify_cached_ms),
        verifies_per_s_uncached: per_second(verify_uncached_ms),
        cache_records: records,
        cache_matches: matches,
        search_ms,
        response_generation_ms,
        responses_per_s: per_second(response_generation_ms),
        query_wire_bytes: query_wire_bytes(node, authority, |s| {
            let c = p(s);
            (c.signature_size_bytes, c.public_key_size_bytes)
        }),
        expected_neighbors,
        offered_query_rate_per_s: offered,
        verify_utilization: offered * verify_uncached_ms / 1000.0,
    })
}

fn rate(r: Option<f64>) -> String {
    r.map_or_else(|| "not crypto-bound".to_string(), |v| format!("{v:.1}/s"))
}

impl fmt::Display for CapacityReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "node scheme        {}", self.node_scheme)?;
        writeln!(f, "authority scheme   {}", self.authority_scheme)?;
        writeln!(
            f,
            "verify (cached)    {:.2} ms  -> {}",
            self.verify_cached_ms,
            rate(self.verifies_per_s_cached)
        )?;
        writeln!(
            f,
            "verify (uncached)  {:.2} ms  -> {}",
            self.verify_uncached_ms,
            rate(self.verifies_per_s_uncached)
        )?;
        writeln!(
            f,
            "response           {:.2} ms search ({} records, {} matches) + sign = {:.2} ms -> {}",
            self.search_ms,
            self.cache_records,
            self.cache_matches,
            self.response_generation_ms,
            rate(self.responses_per_s)
        )?;
        writeln!(f, "query on the wire  {} bytes", self.query_wire_bytes)?;
        writeln!(
            f,
            "offered load       {:.3} queries/s from {:.1} neighbours",
            self.offered_query_rate_per_s, self.expected_neighbors
        )?;
        write!(
            f,
            "verify utilization {:.2}%",
            self.verify_utilization * 100.0
        )
    }
}
