use std::collections::BTreeMap;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use super::config::{ConfigError, ScenarioConfig};
use super::log::EventLog;
use super::metrics::{percentile, MetricsRecord};
use crate::credentials::{Ltca, MisbehaviorReport, Pca, Ra};
use crate::crypto::{CostMeter, CryptoError, CryptoSuite};
use crate::lbs::{LbsServer, PoiDatabase, ResponseMode};
use crate::netsim::{
    generate_workload, EventQueue, Placement, TargetReading, Topology, WorkloadError,
};
use crate::node::{
    Action, Message, NeedSource, Node, NodeEnv, NodeStats, Origin, PoiRecord, ProtocolJudge, Timer,
};
use crate::types::{NodeIndex, PoiType, Point, SimTime, Window};

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("crypto setup: {0}")]
    Crypto(#[from] CryptoError),
    #[error("workload: {0}")]
    Workload(#[from] WorkloadError),
    #[error("POI database: {0}")]
    Database(String),
}

#[derive(Clone, Debug)]
enum Event {
    Need {
        node: NodeIndex,
        poi_type: PoiType,
        location: Point,
    },
    Deliver {
        msg: Arc<Message>,
        to: Vec<NodeIndex>,
    },
    Timer {
        node: NodeIndex,
        timer: Timer,
    },
}

/// Independent RNG stream for one purpose and index.
pub fn stream_seed(seed: u64, stream: u64, index: u64) -> u64 {
    let mut z = seed
        ^ stream.wrapping_mul(0x9e37_79b9_7f4a_7c15)
        ^ index.wrapping_mul(0xd1b5_4a32_d192_ed03);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

const STREAM_PLACEMENT: u64 = 1;
const STREAM_WORKLOAD: u64 = 2;
const STREAM_RADIO: u64 = 3;
const STREAM_POIS: u64 = 4;
const STREAM_LTCA: u64 = 5;
const STREAM_PCA: u64 = 6;
const STREAM_LBS: u64 = 7;
const STREAM_NODE: u64 = 8;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
struct Counters {
    transmissions: u64,
    deliveries: u64,
    reports_rejected: u64,
    resolutions: u64,
    evictions: u64,
}

/// One scenario run: all entities plus the event queue.
pub struct Simulation {
    config: ScenarioConfig,
    suite: CryptoSuite,
    placement: Placement,
    topology: Topology,
    nodes: Vec<Node>,
    ltca: Ltca,
    pca: Pca,
    ra: Ra,
    lbs: LbsServer,
    queue: EventQueue<Event>,
    log: EventLog,
    radio_rng: ChaCha8Rng,
    actions: Vec<Action>,
    counters: Counters,
    violations: Vec<String>,
    finished: bool,
}

impl Simulation {
    pub fn new(config: ScenarioConfig) -> Result<Self, SimError> {
        config.validate()?;
        let seed = config.seed;
        let area = config.area.area();
        let mut prng = ChaCha8Rng::seed_from_u64(stream_seed(seed, STREAM_PLACEMENT, 0));
        let placement = if let Some(pos) = &config.placement.positions {
            Placement::explicit(area, pos.iter().map(|[x, y]| Point::new(*x, *y)).collect())
        } else if let Some(n) = config.placement.nodes {
            Placement::uniform(area, n, &mut prng)
        } else {
            Placement::from_density(
                area,
                config.placement.density_per_km2.unwrap_or(0.0),
                &mut prng,
            )
        };
        let topology = Topology::build(&placement, config.radio);
        let suite = CryptoSuite::new(config.crypto.cost_profiles()?);
        let policy = config.policy.credential_policy();
        let ltca = Ltca::new(
            suite.clone(),
            config.crypto.authority,
            policy,
            stream_seed(seed, STREAM_LTCA, 0),
        )?;
        let pca = Pca::new(
            suite.clone(),
            config.crypto.authority,
            ltca.public_key().clone(),
            policy,
            stream_seed(seed, STREAM_PCA, 0),
        )?;
        let types: Vec<PoiType> = config
            .workload
            .poi_types
            .iter()
            .map(|w| PoiType(w.poi_type))
            .collect();
        let db = match &config.lbs.poi_file {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| SimError::Database(format!("{path}: {e}")))?;
                PoiDatabase::from_text(&text)
                    .map_err(|e| SimError::Database(format!("{path}: {e}")))?
            }
            None => PoiDatabase::generate(
                area,
                &types,
                config.lbs.pois_per_type,
                &mut ChaCha8Rng::seed_from_u64(stream_seed(seed, STREAM_POIS, 0)),
            ),
        };
        let db = Arc::new(db);
        let mut lbs = LbsServer::new(
            db.clone(),
            suite.clone(),
            config.crypto.lbs,
            ltca.public_key().clone(),
            pca.public_key().clone(),
            config.lbs.response_mode,
            config.lbs.access,
            stream_seed(seed, STREAM_LBS, 0),
        )?;
        lbs.reachable = config.lbs.reachable;
        let judge = ProtocolJudge {
            suite: suite.clone(),
            lbs_key: (config.lbs.response_mode == ResponseMode::Signed)
                .then(|| lbs.public_key().clone()),
            db: Some(db),
        };
        let ra = Ra::new(suite.clone(), pca.public_key().clone(), Box::new(judge));
        let params = Arc::new(config.node_params());
        let mut nodes: Vec<Node> = (0..placement.len())
            .map(|i| {
                let idx = NodeIndex(i);
                Node::new(
                    idx,
                    placement.position(idx),
                    params.clone(),
                    stream_seed(seed, STREAM_NODE, i as u64),
                )
            })
            .collect();
        for d in &config.protocol.detectors {
            nodes[*d].detector = true;
        }
        for a in &config.adversaries {
            nodes[a.node].set_adversary(Some(a.strategy()));
        }
        let mut sim = Simulation {
            radio_rng: ChaCha8Rng::seed_from_u64(stream_seed(seed, STREAM_RADIO, 0)),
            log: EventLog::new(config.verbose_log),
            config,
            suite,
            placement,
            topology,
            nodes,
            ltca,
            pca,
            ra,
            lbs,
            queue: EventQueue::new(),
            actions: Vec::new(),
            counters: Counters::default(),
            violations: Vec::new(),
            finished: false,
        };
        sim.setup()?;
        Ok(sim)
    }

    fn setup(&mut self) -> Result<(), SimError> {
        let n = self.nodes.len();
        self.log.record(
            SimTime::ZERO,
            &"sim",
            "start",
            format_args!(
                "seed={},nodes={n},mean_degree={:.3}",
                self.config.seed,
                self.topology.mean_degree()
            ),
        );
        for i in 0..n {
            self.dispatch(NodeIndex(i), |node, env| node.bootstrap(env));
        }
        if self.config.protocol.warm_cache {
            let radius = self.config.protocol.radius_m as f64;
            let db = self.lbs.database().clone();
            for node in &mut self.nodes {
                let pos = node.position.quantized();
                for w in &self.config.workload.poi_types {
                    for p in db.within(PoiType(w.poi_type), &pos, radius) {
                        node.cache.insert(
                            PoiRecord {
                                poi: p.clone(),
                                fetched_at: SimTime::ZERO,
                                origin: Origin::Lbs,
                            },
                            &|_| false,
                        );
                    }
                }
            }
        }
        if self.config.workload.rate_per_min == 0.0 {
            return Ok(());
        }
        let mut wrng = ChaCha8Rng::seed_from_u64(stream_seed(self.config.seed, STREAM_WORKLOAD, 0));
        let arrivals = generate_workload(
            n,
            self.config.workload.rate_per_min,
            &self.config.workload.poi_types,
            self.config.duration(),
            &mut wrng,
        )?;
        let model = self.config.workload.request_model();
        let reading = self.config.workload.target_reading;
        for a in arrivals {
            let j = model
                .sample_request_target(a.node, &self.placement, &mut wrng)
                .expect("request model validated");
            let (node, location) = match reading {
                TargetReading::PeerTarget => (j, self.placement.position(j)),
                TargetReading::QueryLocation => (a.node, self.placement.position(j)),
            };
            self.queue
                .schedule(
                    a.at,
                    Event::Need {
                        node,
                        poi_type: a.poi_type,
                        location,
                    },
                )
                .expect("workload lies in the future");
        }
        Ok(())
    }

    fn dispatch(&mut self, i: NodeIndex, f: impl FnOnce(&mut Node, &mut NodeEnv<'_>)) {
        let mut out = std::mem::take(&mut self.actions);
        {
            let mut env = NodeEnv {
                now: self.queue.now(),
                suite: &self.suite,
                ltca: &mut self.ltca,
                pca: &mut self.pca,
                lbs: &mut self.lbs,
                log: &mut self.log,
                out: &mut out,
            };
            f(&mut self.nodes[i.0], &mut env);
        }
        for a in out.drain(..) {
            self.apply(i, a);
        }
        self.actions = out;
    }

    fn apply(&mut self, from: NodeIndex, action: Action) {
        let now = self.queue.now();
        match action {
            Action::Broadcast(msg) => {
                self.counters.transmissions += self.topology.neighbors(from).len() as u64;
                let to = self.topology.broadcast(from, &mut self.radio_rng);
                if !to.is_empty() {
                    let at = now + self.topology.radio().propagation_delay();
                    self.queue
                        .schedule(at, Event::Deliver { msg, to })
                        .expect("future delivery");
                }
            }
            Action::Schedule(at, timer) => {
                if self
                    .queue
                    .schedule(at, Event::Timer { node: from, timer })
                    .is_err()
                {
                    self.violation("timer_in_past");
                }
            }
            Action::Report(report) => self.resolve(&report),
            Action::ShareCapture(msg, at) => {
                let members: Vec<NodeIndex> = self
                    .nodes
                    .iter()
                    .filter(|n| n.adversary().is_some_and(|a| a.coalition))
                    .map(|n| n.index)
                    .collect();
                for m in members {
                    let _ = self.queue.schedule(
                        at,
                        Event::Timer {
                            node: m,
                            timer: Timer::Replay(msg.clone()),
                        },
                    );
                }
            }
        }
    }

    fn violation(&mut self, name: &str) {
        let now = self.queue.now();
        self.log
            .record(now, &"sim", "violation", format_args!("name={name}"));
        self.violations.push(name.to_string());
    }

    fn resolve(&mut self, report: &MisbehaviorReport) {
        let now = self.queue.now();
        let suspects: Vec<String> = report.suspects().iter().map(|s| s.to_string()).collect();
        self.log.record(
            now,
            &"ra",
            "report_received",
            format_args!(
                "claim={},suspects={}",
                report.claim.name(),
                suspects.join(" ")
            ),
        );
        let revoke = self.config.policy.revoke_on_resolution;
        match self.ra.resolve(report, &self.pca, &mut self.ltca, revoke) {
            Ok(res) => {
                self.counters.resolutions += 1;
                if res.revoked {
                    self.counters.evictions += 1;
                }
                let pcs: Vec<String> = res.pseudonyms.iter().map(|p| p.to_string()).collect();
                let tickets: Vec<String> = res.tickets.iter().map(|t| t.to_string()).collect();
                self.log.record(
                    now,
                    &"ra",
                    "resolved",
                    format_args!(
                        "pc={},ticket={},node={},revoked={}",
                        pcs.join(" "),
                        tickets.join(" "),
                        res.node_id,
                        res.revoked as u8
                    ),
                );
                let owner = self.nodes.iter().find(|n| n.node_id() == res.node_id);
                let sound = owner.is_some_and(|n| {
                    res.pseudonyms
                        .iter()
                        .all(|pc| n.issued.iter().any(|(s, _)| s == pc))
                });
                if !sound {
                    self.violation("resolution_soundness");
                }
                if res.revoked {
                    self.log.record(
                        now,
                        &"ltca",
                        "revoked",
                        format_args!("node={}", res.node_id),
                    );
                }
            }
            Err(e) => {
                self.counters.reports_rejected += 1;
                let why = e.to_string().replace([',', '=', '|'], " ");
                self.log
                    .record(now, &"ra", "report_rejected", format_args!("reason={why}"));
            }
        }
    }

    /// Runs to the configured duration. Calling it again is a no-op.
    pub fn run(&mut self) {
        if self.finished {
            return;
        }
        let end = self.config.duration();
        while let Some((_, ev)) = self.queue.pop_until(end) {
            match ev {
                Event::Need {
                    node,
                    poi_type,
                    location,
                } => {
                    self.dispatch(node, |n, env| n.handle_need(env, poi_type, location));
                }
                Event::Deliver { msg, to } => {
                    for r in to {
                        self.counters.deliveries += 1;
                        self.dispatch(r, |n, env| n.handle_delivery(env, &msg));
                    }
                }
                Event::Timer { node, timer } => {
                    self.dispatch(node, |n, env| n.handle_timer(env, timer))
                }
            }
        }
        self.drain(end);
        self.finished = true;
        self.final_checks();
        self.log.record(
            end,
            &"sim",
            "end",
            format_args!("violations={}", self.violations.len()),
        );
    }

    /// Lets needs still waiting on peers reach their timeout. No new needs,
    /// rotations or adversary activity start after the configured end.
    fn drain(&mut self, end: SimTime) {
        let p = self.config.node_params();
        let limit = end + p.timeout + p.backoff_max + SimTime::from_secs(1);
        while self.nodes.iter().any(|n| n.pending_needs() > 0) {
            let Some((_, ev)) = self.queue.pop_until(limit) else {
                break;
            };
            match ev {
                Event::Deliver { msg, to } => {
                    for r in to {
                        self.counters.deliveries += 1;
                        self.dispatch(r, |n, env| n.handle_delivery(env, &msg));
                    }
                }
                Event::Timer {
                    node,
                    timer: timer @ (Timer::QueryTimeout(_) | Timer::Backoff(..)),
                } => self.dispatch(node, |n, env| n.handle_timer(env, timer)),
                _ => {}
            }
        }
    }

    fn final_checks(&mut self) {
        for n in 0..self.nodes.len() {
            let mut ws: Vec<Window> = self.nodes[n].issued.iter().map(|(_, w)| *w).collect();
            ws.sort_by_key(|w| w.from);
            if ws.windows(2).any(|p| p[0].overlaps(&p[1])) {
                self.violation("overlapping_pseudonyms");
            }
            let honest = self.nodes[n].adversary().is_none();
            if honest && self.nodes[n].stats.hygiene_violations > 0 {
                self.violation("signature_hygiene");
            }
        }
        for id in self
            .ltca
            .ledger()
            .node_ids()
            .map(str::to_string)
            .collect::<Vec<_>>()
        {
            let mut ws: Vec<Window> = self
                .ltca
                .ledger()
                .tickets_of(&id)
                .iter()
                .map(|t| t.window)
                .collect();
            ws.sort_by_key(|w| w.from);
            if ws.windows(2).any(|p| p[0].overlaps(&p[1])) {
                self.violation("overlapping_tickets");
            }
        }
        let ltca_text = self.ltca.ledger().to_snapshot();
        let pca_text = self.pca.ledger().to_snapshot();
        if ltca_text.contains("P-") || pca_text.contains("node-") || pca_text.contains("L-") {
            self.violation("ledger_separation");
        }
        for v in self.metrics().consistency_violations() {
            self.violation(&v);
        }
    }

    /// Has `node` ask the LTCA for a ticket starting at the next grid point
    /// after the current time. Logged like any other request.
    pub fn probe_ticket(&mut self, node: NodeIndex) -> bool {
        let at = self.queue.now();
        let grid = self.config.policy.credential_policy().issuance_grid;
        let start =
            SimTime(at.as_micros().div_ceil(grid.as_micros().max(1)) * grid.as_micros().max(1));
        let mut ok = false;
        self.dispatch(node, |n, env| ok = n.request_pseudonyms(env, start));
        ok
    }

    /// Adds one information need to the schedule. Fails if `at` is already past.
    pub fn schedule_need(
        &mut self,
        at: SimTime,
        node: NodeIndex,
        poi_type: PoiType,
        location: Point,
    ) -> bool {
        node.0 < self.nodes.len()
            && self
                .queue
                .schedule(
                    at,
                    Event::Need {
                        node,
                        poi_type,
                        location,
                    },
                )
                .is_ok()
    }

    /// Revokes a long-term identity at the LTCA, as a resolution would.
    pub fn revoke(&mut self, node_id: &str) -> bool {
        let now = self.queue.now();
        let fresh = self.ltca.revoke(node_id);
        if fresh {
            self.log
                .record(now, &"ltca", "revoked", format_args!("node={node_id}"));
        }
        fresh
    }

    pub fn node_mut(&mut self, node: NodeIndex) -> &mut Node {
        &mut self.nodes[node.0]
    }

    pub fn config(&self) -> &ScenarioConfig {
        &self.config
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn ltca(&self) -> &Ltca {
        &self.ltca
    }

    pub fn pca(&self) -> &Pca {
        &self.pca
    }

    pub fn lbs(&self) -> &LbsServer {
        &self.lbs
    }

    pub fn placement(&self) -> &Placement {
        &self.placement
    }

    pub fn topology(&self) -> &Topology {
        &self.topology
    }

    pub fn log(&self) -> &EventLog {
        &self.log
    }

    pub fn violations(&self) -> &[String] {
        &self.violations
    }

    /// Node statistics summed over all nodes.
    pub fn node_totals(&self) -> NodeStats {
        let mut s = NodeStats::default();
        for n in &self.nodes {
            s.absorb(&n.stats);
        }
        s
    }

    /// Simulated crypto time charged to every party.
    pub fn crypto_totals(&self) -> CostMeter {
        let mut m = CostMeter::new();
        for n in &self.nodes {
            m.absorb(&n.meter);
        }
        for other in [
            &self.ltca.meter,
            &self.pca.meter,
            &self.ra.meter,
            &self.lbs.meter,
        ] {
            m.absorb(other);
        }
        m
    }

    pub fn metrics(&self) -> MetricsRecord {
        let s = self.node_totals();
        let crypto = self.crypto_totals();
        let needs = s.needs;
        let ratio = |x: u64| {
            if needs == 0 {
                0.0
            } else {
                x as f64 / needs as f64
            }
        };
        let mut lat: Vec<f64> = s
            .latencies
            .iter()
            .map(|t| t.as_micros() as f64 / 1e3)
            .collect();
        let mean = if lat.is_empty() {
            0.0
        } else {
            lat.iter().sum::<f64>() / lat.len() as f64
        };
        let p95 = percentile(&mut lat, 95.0);
        let duration_s = self.config.duration().as_secs_f64();
        let n = self.nodes.len();
        let mut m = MetricsRecord {
            nodes: n,
            duration_s,
            mean_degree: self.topology.mean_degree(),
            total_needs: needs,
            locally_served: s.served(NeedSource::Local),
            peer_served: s.served(NeedSource::Peer),
            lbs_served: s.served(NeedSource::Lbs),
            unsatisfied: s.served(NeedSource::Unsatisfied),
            lbs_exposure_ratio: ratio(s.lbs_contacts),
            peer_served_ratio: ratio(s.served(NeedSource::Peer)),
            latency_mean_ms: mean,
            latency_p95_ms: p95,
            broadcasts: s.broadcasts,
            messages_sent: self.counters.transmissions,
            messages_delivered: self.counters.deliveries,
            messages_accepted: s.accepted_queries + s.accepted_responses + s.overheard_responses,
            messages_overheard: s.overheard_responses,
            queries_sent: s.queries_sent,
            responses_sent: s.responses_sent,
            responses_suppressed: s.responses_suppressed,
            query_receptions: s.query_receptions,
            mean_received_query_rate_per_s: if n == 0 {
                0.0
            } else {
                s.query_receptions as f64 / (n as f64 * duration_s)
            },
            pc_verifications: s.pc_verifications,
            pc_cache_hits: s.pc_cache_hits,
            message_verifications: s.msg_verifications,
            crypto_time_ms: crypto.total_ms(),
            crypto_keygens: crypto.keygens,
            crypto_signs: crypto.signs,
            crypto_verifies: crypto.verifies,
            quota_drops: s.dropped(crate::node::DropReason::Quota),
            dropped_messages: s.drops.values().sum(),
            reports_filed: s.reports_filed,
            reports_rejected: self.counters.reports_rejected,
            resolutions: self.counters.resolutions,
            evictions: self.counters.evictions,
            lbs_contacts: s.lbs_contacts,
            server_log_entries: self.lbs.log().len() as u64,
            invariant_violations: Vec::new(),
        };
        m.invariant_violations = self.violations.clone();
        m
    }
}

/// Result of [`run_scenario`].
pub struct RunOutput {
    pub metrics: MetricsRecord,
    pub log: EventLog,
    pub simulation: Simulation,
}

impl RunOutput {
    pub fn ok(&self) -> bool {
        self.metrics.invariant_violations.is_empty()
    }
}

pub fn run_scenario(config: ScenarioConfig) -> Result<RunOutput, SimError> {
    let mut sim = Simulation::new(config)?;
    sim.run();
    Ok(RunOutput {
        metrics: sim.metrics(),
        log: sim.log.clone(),
        simulation: sim,
    })
}

/// Ground truth `pc serial -> node` from a run's issued pseudonyms.
pub fn pseudonym_owners(sim: &Simulation) -> BTreeMap<String, NodeIndex> {
    sim.nodes
        .iter()
        .flat_map(|n| n.issued.iter().map(move |(s, _)| (s.to_string(), n.index)))
        .collect()
}

#[allow(dead_code)]
fn _assert_send() {
    fn is_send<T: Send>() {}
    is_send::<Simulation>();
    let _ = ChaCha8Rng::seed_from_u64(0).gen::<u8>();
}
