//! The mobile node: POI cache, the querying and serving procedures,
//! per-pseudonym rate limiting, and the three optimizations (pseudonym
//! caching, opportunistic caching of popular responses, back-off with
//! overhearing).
//!
//! A node is a passive state machine. The simulator hands it events and a
//! [`NodeEnv`]; the node answers by pushing [`Action`]s.

mod cache;
mod guards;
mod judge;
mod messages;

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::hash::{DefaultHasher, Hash, Hasher};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::adversary::{
    self, AdversaryEvent, AdversaryKind, AdversaryStrategy, NodeView, Outbound,
};
use crate::credentials::{
    CertificateRequest, Claim, EvidenceItem, LongTermCertificate, Ltca, MisbehaviorReport,
    PcSerial, Pca, PseudonymCertificate, ShortTermKeyRequest, Ticket, TicketRequest,
};
use crate::crypto::{CostMeter, CryptoSuite, KeyPair, SchemeId, Signature};
use crate::harness::EventLog;
use crate::lbs::{Credential, LbsRequest, LbsResponse, LbsServer, Poi};
use crate::types::{NodeIndex, PoiType, Point, SimTime};

pub use cache::{
    combine, is_satisfactory, NodeCache, Origin, PoiRecord, PopularityTracker, RecordKey,
};
pub use guards::{MessageKind, PseudonymCache, QuotaLedger, ReplayGuard};
pub use judge::{contradicts, ProtocolJudge};
pub use messages::{
    query_from_signed_bytes, LinkIdentity, Message, PcRef, PeerQuery, PeerResponse, QueryPayload,
    ResponsePayload, QUERY_PAYLOAD_LEN,
};

/// Which credential a node shows the LBS.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LbsCredentialMode {
    LongTerm,
    #[default]
    Pseudonym,
    Anonymous,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NodeParams {
    /// N: peer responses wanted per query.
    pub wanted_responses: u8,
    pub timeout: SimTime,
    /// Q: accepted queries per pseudonym per receiver.
    pub quota: u32,
    pub freshness: SimTime,
    pub min_results: usize,
    pub radius_m: u16,
    pub backoff_max: SimTime,
    pub cache_capacity: usize,
    pub cache_cell_m: f64,
    /// Skip the PCA signature check for already verified PCs.
    pub pseudonym_cache: bool,
    /// Attach the PC to every k-th signed message; 1 attaches always.
    pub attach_pc_every: u32,
    /// Cache overheard records of frequently requested types.
    pub popular_caching: bool,
    pub popularity_window: usize,
    pub popularity_threshold: f64,
    /// Random response delay, cancelled once N responses are overheard.
    pub backoff: bool,
    pub serve_peer_origin: bool,
    pub p2p: bool,
    pub lbs_credential: LbsCredentialMode,
    pub lbs_fallback: bool,
    pub self_limit: bool,
    pub report_quota: bool,
    pub report_contradictions: bool,
    pub long_term_scheme: SchemeId,
    pub short_term_scheme: SchemeId,
    /// Pseudonyms requested per ticket.
    pub batch_size: usize,
}

impl Default for NodeParams {
    fn default() -> Self {
        let timeout = SimTime::from_secs(2);
        NodeParams {
            wanted_responses: 3,
            timeout,
            quota: 10,
            freshness: SimTime::from_secs(5),
            min_results: 1,
            radius_m: 500,
            backoff_max: SimTime(timeout.as_micros() / 2),
            cache_capacity: 100,
            cache_cell_m: 250.0,
            pseudonym_cache: true,
            attach_pc_every: 1,
            popular_caching: true,
            popularity_window: 100,
            popularity_threshold: 0.2,
            backoff: true,
            serve_peer_origin: true,
            p2p: true,
            lbs_credential: LbsCredentialMode::Pseudonym,
            lbs_fallback: true,
            self_limit: true,
            report_quota: true,
            report_contradictions: true,
            long_term_scheme: SchemeId::ModelRsa1024,
            short_term_scheme: SchemeId::ModelRsa1024,
            batch_size: 1,
        }
    }
}

/// Where an information need was finally served from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum NeedSource {
    Local,
    Peer,
    Lbs,
    Unsatisfied,
}

impl NeedSource {
    pub fn name(self) -> &'static str {
        match self {
            NeedSource::Local => "local",
            NeedSource::Peer => "peer",
            NeedSource::Lbs => "lbs",
            NeedSource::Unsatisfied => "none",
        }
    }
}

/// Why an incoming message was discarded.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum DropReason {
    UnknownPseudonym,
    BadPseudonym,
    PseudonymNotValid,
    Stale,
    Replay,
    Quota,
    BadSignature,
}

impl DropReason {
    pub fn name(self) -> &'static str {
        match self {
            DropReason::UnknownPseudonym => "unknown_pc",
            DropReason::BadPseudonym => "bad_pc",
            DropReason::PseudonymNotValid => "pc_not_valid",
            DropReason::Stale => "stale",
            DropReason::Replay => "replay",
            DropReason::Quota => "quota",
            DropReason::BadSignature => "bad_signature",
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct NodeStats {
    pub needs: u64,
    pub served: BTreeMap<NeedSource, u64>,
    pub latencies: Vec<SimTime>,
    pub broadcasts: u64,
    pub queries_sent: u64,
    pub responses_sent: u64,
    pub responses_suppressed: u64,
    pub query_receptions: u64,
    pub response_receptions: u64,
    pub accepted_queries: u64,
    pub accepted_responses: u64,
    pub overheard_responses: u64,
    pub pc_cache_hits: u64,
    pub pc_verifications: u64,
    pub msg_verifications: u64,
    pub drops: BTreeMap<DropReason, u64>,
    pub reports_filed: u64,
    pub lbs_contacts: u64,
    pub opportunistic_cached: u64,
    pub hygiene_violations: u64,
}

impl NodeStats {
    pub fn served(&self, s: NeedSource) -> u64 {
        self.served.get(&s).copied().unwrap_or(0)
    }

    pub fn dropped(&self, r: DropReason) -> u64 {
        self.drops.get(&r).copied().unwrap_or(0)
    }

    pub fn absorb(&mut self, o: &NodeStats) {
        self.needs += o.needs;
        for (k, v) in &o.served {
            *self.served.entry(*k).or_default() += v;
        }
        self.latencies.extend_from_slice(&o.latencies);
        self.broadcasts += o.broadcasts;
        self.queries_sent += o.queries_sent;
        self.responses_sent += o.responses_sent;
        self.responses_suppressed += o.responses_suppressed;
        self.query_receptions += o.query_receptions;
        self.response_receptions += o.response_receptions;
        self.accepted_queries += o.accepted_queries;
        self.accepted_responses += o.accepted_responses;
        self.overheard_responses += o.overheard_responses;
        self.pc_cache_hits += o.pc_cache_hits;
        self.pc_verifications += o.pc_verifications;
        self.msg_verifications += o.msg_verifications;
        for (k, v) in &o.drops {
            *self.drops.entry(*k).or_default() += v;
        }
        self.reports_filed += o.reports_filed;
        self.lbs_contacts += o.lbs_contacts;
        self.opportunistic_cached += o.opportunistic_cached;
        self.hygiene_violations += o.hygiene_violations;
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Timer {
    QueryTimeout(u32),
    Backoff(PcSerial, u32),
    Rotate,
    AdversaryTick,
    Replay(Arc<Message>),
}

/// Requests from a node to the simulator.
#[derive(Clone, Debug)]
pub enum Action {
    Broadcast(Arc<Message>),
    Schedule(SimTime, Timer),
    Report(Box<MisbehaviorReport>),
    /// A captured message to be replayed by every coalition member.
    ShareCapture(Arc<Message>, SimTime),
}

/// Everything outside the node that it may touch while handling one event.
pub struct NodeEnv<'a> {
    pub now: SimTime,
    pub suite: &'a CryptoSuite,
    pub ltca: &'a mut Ltca,
    pub pca: &'a mut Pca,
    pub lbs: &'a mut LbsServer,
    pub log: &'a mut EventLog,
    pub out: &'a mut Vec<Action>,
}

struct Held {
    pc: Arc<PseudonymCertificate>,
    key: KeyPair,
}

struct Active {
    held: Held,
    sent_queries: u32,
    signed: u32,
}

struct PendingQuery {
    payload: QueryPayload,
    started: SimTime,
    combined: Vec<Poi>,
    evidence: Vec<EvidenceItem>,
}

struct PendingServe {
    dest: u64,
    wanted: u8,
    records: Vec<Poi>,
    overheard: u32,
}

fn digest(bytes: &[u8]) -> u64 {
    let mut h = DefaultHasher::new();
    bytes.hash(&mut h);
    h.finish()
}

pub struct Node {
    pub index: NodeIndex,
    pub position: Point,
    pub detector: bool,
    params: Arc<NodeParams>,
    adversary: Option<AdversaryStrategy>,
    captured: usize,
    rng: ChaCha8Rng,
    long_term: Option<(KeyPair, LongTermCertificate)>,
    current: Option<Active>,
    successors: VecDeque<Held>,
    last_ticket: Option<Ticket>,
    link: LinkIdentity,
    pub cache: NodeCache,
    popularity: PopularityTracker,
    pc_cache: PseudonymCache,
    quota: QuotaLedger,
    replay: ReplayGuard,
    quota_evidence: HashMap<PcSerial, Vec<EvidenceItem>>,
    pending: BTreeMap<u32, PendingQuery>,
    serving: BTreeMap<(PcSerial, u32), PendingServe>,
    reported: BTreeSet<PcSerial>,
    /// Every pseudonym this node was issued, in issuance order. Ground
    /// truth for the simulator's checks; the protocol never reads it.
    pub issued: Vec<(PcSerial, crate::types::Window)>,
    pub meter: CostMeter,
    pub stats: NodeStats,
}

impl Node {
    pub fn new(index: NodeIndex, position: Point, params: Arc<NodeParams>, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let link = LinkIdentity::random(&mut rng);
        Node {
            index,
            position,
            detector: false,
            cache: NodeCache::new(params.cache_capacity, params.cache_cell_m),
            popularity: PopularityTracker::new(
                params.popularity_window,
                params.popularity_threshold,
            ),
            quota: QuotaLedger::new(params.quota),
            replay: ReplayGuard::new(params.freshness),
            params,
            adversary: None,
            captured: 0,
            rng,
            long_term: None,
            current: None,
            successors: VecDeque::new(),
            last_ticket: None,
            link,
            pc_cache: PseudonymCache::default(),
            quota_evidence: HashMap::new(),
            pending: BTreeMap::new(),
            serving: BTreeMap::new(),
            reported: BTreeSet::new(),
            issued: Vec::new(),
            meter: CostMeter::new(),
            stats: NodeStats::default(),
        }
    }

    pub fn set_adversary(&mut self, strategy: Option<AdversaryStrategy>) {
        self.adversary = strategy;
    }

    pub fn adversary(&self) -> Option<&AdversaryStrategy> {
        self.adversary.as_ref()
    }

    pub fn params(&self) -> &NodeParams {
        &self.params
    }

    pub fn node_id(&self) -> String {
        self.index.identity()
    }

    pub fn link(&self) -> LinkIdentity {
        self.link
    }

    pub fn long_term_certificate(&self) -> Option<&LongTermCertificate> {
        self.long_term.as_ref().map(|(_, c)| c)
    }

    /// The PC currently used for signing, if any.
    pub fn current_pc(&self) -> Option<&Arc<PseudonymCertificate>> {
        self.current.as_ref().map(|a| &a.held.pc)
    }

    pub fn held_pcs(&self) -> impl Iterator<Item = &Arc<PseudonymCertificate>> {
        self.current
            .iter()
            .map(|a| &a.held.pc)
            .chain(self.successors.iter().map(|h| &h.pc))
    }

    pub fn quota_ledger(&self) -> &QuotaLedger {
        &self.quota
    }

    pub fn popularity(&self) -> &PopularityTracker {
        &self.popularity
    }

    fn view(&self, now: SimTime) -> NodeView {
        NodeView {
            now,
            position: self.position,
            current_window: self.current.as_ref().map(|a| a.held.pc.window),
            captured: self.captured,
        }
    }

    fn adversary_act(&mut self, env: &mut NodeEnv<'_>, event: AdversaryEvent<'_>) {
        let Some(strategy) = self.adversary.clone() else {
            return;
        };
        let view = self.view(env.now);
        let out = adversary::act(&strategy, &view, event, &mut self.rng);
        for o in out {
            self.execute(env, &strategy, o);
        }
    }

    // ---- credentials ----------------------------------------------------

    /// Long-term key generation, registration, and the first pseudonyms.
    pub fn bootstrap(&mut self, env: &mut NodeEnv<'_>) {
        let key = match env.suite.generate_keypair(
            self.params.long_term_scheme,
            &mut self.rng,
            &mut self.meter,
        ) {
            Ok(k) => k,
            Err(e) => {
                env.log.record(
                    env.now,
                    &self.index,
                    "register_failed",
                    format_args!("reason={e}"),
                );
                return;
            }
        };
        let csr = CertificateRequest::new(&self.node_id(), &key, env.suite, &mut self.meter);
        match env.ltca.register(&csr) {
            Ok(ltc) => {
                env.log.record(
                    env.now,
                    &"ltca",
                    "registered",
                    format_args!("node={},ltc={}", ltc.node_id, ltc.serial),
                );
                self.long_term = Some((key, ltc));
            }
            Err(e) => {
                env.log.record(
                    env.now,
                    &self.index,
                    "register_failed",
                    format_args!("reason={}", e.to_string().replace([',', '=', '|'], " ")),
                );
                return;
            }
        }
        self.rotate(env);
        self.adversary_act(env, AdversaryEvent::Start);
    }

    /// Requests a fresh ticket and pseudonym batch outside the normal
    /// rotation schedule. Returns whether pseudonyms were issued.
    pub fn request_pseudonyms(&mut self, env: &mut NodeEnv<'_>, desired_start: SimTime) -> bool {
        self.acquire(env, desired_start)
    }

    /// Obtains a ticket starting at or after `desired_start` and exchanges
    /// it for a batch of pseudonyms. Returns whether pseudonyms were added.
    fn acquire(&mut self, env: &mut NodeEnv<'_>, desired_start: SimTime) -> bool {
        let Some((lk, ltc)) = &self.long_term else {
            return false;
        };
        let req = TicketRequest::new(ltc, desired_start, lk, env.suite, &mut self.meter);
        let ticket = match env.ltca.request_ticket(&req) {
            Ok(t) => t,
            Err(e) => {
                env.log.record(
                    env.now,
                    &"ltca",
                    "ticket_denied",
                    format_args!("node={},reason={}", ltc.node_id, deny_reason(&e)),
                );
                return false;
            }
        };
        env.log.record(
            env.now,
            &"ltca",
            "ticket_issued",
            format_args!(
                "node={},ticket={},from={},to={}",
                ltc.node_id,
                ticket.serial,
                ticket.window.from.as_micros(),
                ticket.window.to.as_micros()
            ),
        );
        let mut keys = Vec::new();
        let mut reqs = Vec::new();
        for _ in 0..self.params.batch_size.max(1) {
            let Ok(k) = env.suite.generate_keypair(
                self.params.short_term_scheme,
                &mut self.rng,
                &mut self.meter,
            ) else {
                return false;
            };
            reqs.push(ShortTermKeyRequest::new(&k, env.suite, &mut self.meter));
            keys.push(k);
        }
        self.last_ticket = Some(ticket.clone());
        match env.pca.issue_pseudonyms(&ticket, &reqs) {
            Ok(pcs) => {
                for (pc, key) in pcs.into_iter().zip(keys) {
                    env.log.record(
                        env.now,
                        &"pca",
                        "pc_issued",
                        format_args!(
                            "pc={},ticket={},from={},to={}",
                            pc.serial,
                            ticket.serial,
                            pc.window.from.as_micros(),
                            pc.window.to.as_micros()
                        ),
                    );
                    self.issued.push((pc.serial, pc.window));
                    let pos = self
                        .successors
                        .partition_point(|h| h.pc.window.from <= pc.window.from);
                    self.successors.insert(
                        pos,
                        Held {
                            pc: Arc::new(pc),
                            key,
                        },
                    );
                }
                true
            }
            Err(e) => {
                env.log.record(
                    env.now,
                    &"pca",
                    "pc_denied",
                    format_args!("ticket={},reason={}", ticket.serial, deny_reason(&e)),
                );
                false
            }
        }
    }

    /// Drops the expired pseudonym and installs the successor valid now,
    /// acquiring a new batch when none is held. A fresh link identity comes
    /// with every new pseudonym, and outward state tied to the old one is
    /// discarded.
    pub fn rotate(&mut self, env: &mut NodeEnv<'_>) {
        let now = env.now;
        if let Some(a) = &self.current {
            if a.held.pc.window.contains(now) {
                return;
            }
        }
        self.current = None;
        self.serving.clear();
        self.successors.retain(|h| h.pc.window.to > now);
        if self.successors.is_empty() && !self.acquire(env, now) {
            env.log.record(
                now,
                &self.index,
                "p2p_silent",
                format_args!("reason=no_pseudonym"),
            );
            return;
        }
        let Some(next) = self.successors.front() else {
            return;
        };
        if next.pc.window.from > now {
            env.out
                .push(Action::Schedule(next.pc.window.from, Timer::Rotate));
            return;
        }
        let held = self.successors.pop_front().expect("front exists");
        self.link = LinkIdentity::random(&mut self.rng);
        env.log.record(
            now,
            &self.index,
            "pc_installed",
            format_args!(
                "pc={},link={},ip={},from={},to={}",
                held.pc.serial,
                self.link.address_str(),
                self.link.ip_str(),
                held.pc.window.from.as_micros(),
                held.pc.window.to.as_micros()
            ),
        );
        env.out
            .push(Action::Schedule(held.pc.window.to, Timer::Rotate));
        self.current = Some(Active {
            held,
            sent_queries: 0,
            signed: 0,
        });
        self.pc_cache.purge(now);
        self.quota.prune(now);
        self.quota_evidence
            .retain(|_, v| v.first().is_some_and(|e| e.pc.window.to > now));
        self.replay.prune(now);
        self.adversary_act(env, AdversaryEvent::Rotated);
    }

    /// Signs under the current pseudonym. Returns the signature and the
    /// certificate reference to put on the wire.
    fn sign_current(
        &mut self,
        env: &mut NodeEnv<'_>,
        bytes: &[u8],
        issued_at: SimTime,
    ) -> Option<(Signature, PcRef)> {
        let a = self.current.as_mut()?;
        let sig = env.suite.sign(bytes, &a.held.key, &mut self.meter);
        let every = self.params.attach_pc_every.max(1);
        let pc_ref = if a.signed % every == 0 {
            PcRef::Attached(a.held.pc.clone())
        } else {
            PcRef::Serial(a.held.pc.serial)
        };
        a.signed += 1;
        if !a.held.pc.window.contains(issued_at) {
            self.stats.hygiene_violations += 1;
            env.log.record(
                env.now,
                &self.index,
                "violation",
                format_args!("name=signature_hygiene,pc={}", a.held.pc.serial),
            );
        }
        Some((sig, pc_ref))
    }

    fn broadcast(&mut self, env: &mut NodeEnv<'_>, msg: Message) {
        self.stats.broadcasts += 1;
        env.out.push(Action::Broadcast(Arc::new(msg)));
    }

    // ---- querying -------------------------------------------------------

    /// One information need: local cache, then peers, then the LBS.
    pub fn handle_need(&mut self, env: &mut NodeEnv<'_>, poi_type: PoiType, location: Point) {
        let now = env.now;
        self.stats.needs += 1;
        let location = location.quantized();
        let radius = self.params.radius_m as f64;
        let local = self.cache.search(poi_type, &location, radius, true);
        if is_satisfactory(&local, poi_type, &location, radius, self.params.min_results) {
            env.log.record(
                now,
                &self.index,
                "local_hit",
                format_args!("type={poi_type},n={}", local.len()),
            );
            self.finish_need(env, now, poi_type, NeedSource::Local);
            return;
        }
        let over_quota = self.params.self_limit
            && self
                .current
                .as_ref()
                .is_some_and(|a| a.sent_queries >= self.params.quota);
        if !self.params.p2p || self.current.is_none() || over_quota {
            let reason = if !self.params.p2p {
                "disabled"
            } else if over_quota {
                "quota"
            } else {
                "no_pseudonym"
            };
            env.log.record(
                now,
                &self.index,
                "p2p_skipped",
                format_args!("type={poi_type},reason={reason}"),
            );
            if self.current.is_none() && !self.params.lbs_fallback {
                self.finish_need(env, now, poi_type, NeedSource::Unsatisfied);
                return;
            }
            self.need_from_lbs(env, poi_type, location);
            return;
        }
        let Some(q) = self.send_query(env, poi_type, location) else {
            env.log.record(
                now,
                &self.index,
                "p2p_skipped",
                format_args!("type={poi_type},reason=unsigned"),
            );
            self.need_from_lbs(env, poi_type, location);
            return;
        };
        self.popularity.observe(poi_type);
        self.pending.insert(
            q.query_id,
            PendingQuery {
                payload: q.clone(),
                started: now,
                combined: Vec::new(),
                evidence: Vec::new(),
            },
        );
        env.out.push(Action::Schedule(
            now + self.params.timeout,
            Timer::QueryTimeout(q.query_id),
        ));
    }

    fn need_from_lbs(&mut self, env: &mut NodeEnv<'_>, poi_type: PoiType, location: Point) {
        let now = env.now;
        let source = match self.query_lbs(env, poi_type, location) {
            Some(resp) => {
                self.cache_records(&resp.records, now, Origin::Lbs);
                NeedSource::Lbs
            }
            None => NeedSource::Unsatisfied,
        };
        self.finish_need(env, now, poi_type, source);
    }

    /// Needs waiting for peer answers.
    pub fn pending_needs(&self) -> usize {
        self.pending.len()
    }

    fn send_query(
        &mut self,
        env: &mut NodeEnv<'_>,
        poi_type: PoiType,
        location: Point,
    ) -> Option<QueryPayload> {
        let now = env.now;
        let mut query_id = self.rng.gen::<u32>();
        while self.pending.contains_key(&query_id) {
            query_id = self.rng.gen();
        }
        let payload = QueryPayload {
            query_id,
            issued_at: now,
            location: location.quantized(),
            poi_type,
            wanted: self.params.wanted_responses,
            radius_m: self.params.radius_m,
        };
        let (signature, pc) = self.sign_current(env, &payload.signed_bytes(), now)?;
        let a = self.current.as_mut().expect("signed under current");
        a.sent_queries += 1;
        env.log.record(
            now,
            &self.index,
            "query_sent",
            format_args!(
                "q={query_id},pc={},link={},ip={},type={poi_type},attached={}",
                pc.serial(),
                self.link.address_str(),
                self.link.ip_str(),
                pc.is_attached() as u8
            ),
        );
        self.stats.queries_sent += 1;
        let query = PeerQuery {
            payload: payload.clone(),
            signature,
            pc,
            link: self.link,
        };
        self.broadcast(env, Message::Query(query.clone()));
        self.adversary_act(env, AdversaryEvent::QuerySent(&query));
        Some(payload)
    }

    fn query_lbs(
        &mut self,
        env: &mut NodeEnv<'_>,
        poi_type: PoiType,
        location: Point,
    ) -> Option<LbsResponse> {
        let now = env.now;
        let request = LbsRequest {
            location,
            poi_type,
            radius_m: self.params.radius_m as f64,
            issued_at: now,
        };
        let tbs = request.signed_bytes();
        let credential = match (self.params.lbs_credential, &self.current, &self.long_term) {
            (LbsCredentialMode::LongTerm, _, Some((lk, ltc))) => Credential::LongTerm {
                ltc: ltc.clone(),
                signature: env.suite.sign(&tbs, lk, &mut self.meter),
            },
            (LbsCredentialMode::Pseudonym, Some(a), _) => Credential::Pseudonym {
                pc: a.held.pc.clone(),
                signature: env.suite.sign(&tbs, &a.held.key, &mut self.meter),
            },
            _ => Credential::Anonymous,
        };
        let shown = match &credential {
            Credential::LongTerm { ltc, .. } => ltc.node_id.clone(),
            Credential::Pseudonym { pc, .. } => pc.serial.to_string(),
            Credential::Anonymous => "anonymous".to_string(),
        };
        match env.lbs.answer(&request, &credential, now, Some(self.index)) {
            Ok(resp) => {
                self.stats.lbs_contacts += 1;
                env.log.record(
                    now,
                    &self.index,
                    "lbs_query",
                    format_args!("cred={shown},type={poi_type},n={}", resp.records.len()),
                );
                if let Some(sig) = &resp.signature {
                    let bytes = LbsResponse::signed_bytes(&resp.request, &resp.records);
                    if !env
                        .suite
                        .verify(&bytes, sig, env.lbs.public_key(), &mut self.meter)
                        .is_accept()
                    {
                        env.log.record(
                            now,
                            &self.index,
                            "lbs_bad_signature",
                            format_args!("type={poi_type}"),
                        );
                        return None;
                    }
                }
                Some(resp)
            }
            Err(e) => {
                env.log.record(
                    now,
                    &self.index,
                    "lbs_failed",
                    format_args!("cred={shown},type={poi_type},reason={}", lbs_reason(&e)),
                );
                None
            }
        }
    }

    fn finish_need(
        &mut self,
        env: &mut NodeEnv<'_>,
        started: SimTime,
        poi_type: PoiType,
        source: NeedSource,
    ) {
        let latency = env.now.saturating_sub(started);
        *self.stats.served.entry(source).or_default() += 1;
        self.stats.latencies.push(latency);
        env.log.record(
            env.now,
            &self.index,
            "need_done",
            format_args!(
                "type={poi_type},source={},latency_us={}",
                source.name(),
                latency.as_micros()
            ),
        );
    }

    fn cache_records(&mut self, records: &[Poi], now: SimTime, origin: Origin) {
        let pop = &self.popularity;
        let popular = |t: PoiType| pop.is_popular(t);
        for p in records {
            self.cache.insert(
                PoiRecord {
                    poi: p.clone(),
                    fetched_at: now,
                    origin,
                },
                &popular,
            );
        }
    }

    /// Ends collection for a pending query: use the combined peer answer if
    /// satisfactory, otherwise (or when auditing) ask the LBS.
    fn finalize(&mut self, env: &mut NodeEnv<'_>, query_id: u32) {
        let Some(p) = self.pending.remove(&query_id) else {
            return;
        };
        let now = env.now;
        let q = &p.payload;
        let radius = q.radius_m as f64;
        let satisfactory = is_satisfactory(
            &p.combined,
            q.poi_type,
            &q.location,
            radius,
            self.params.min_results,
        );
        let audit = self.detector && !p.evidence.is_empty();
        if satisfactory && !audit {
            self.cache_records(&p.combined, now, Origin::Peer);
            self.finish_need(env, p.started, q.poi_type, NeedSource::Peer);
            return;
        }
        match self.query_lbs(env, q.poi_type, q.location) {
            Some(resp) => {
                if self.params.report_contradictions && !p.evidence.is_empty() {
                    self.audit(env, &p, &resp);
                }
                self.cache_records(&resp.records, now, Origin::Lbs);
                self.finish_need(env, p.started, q.poi_type, NeedSource::Lbs);
            }
            None if satisfactory => {
                self.cache_records(&p.combined, now, Origin::Peer);
                self.finish_need(env, p.started, q.poi_type, NeedSource::Peer);
            }
            None => self.finish_need(env, p.started, q.poi_type, NeedSource::Unsatisfied),
        }
    }

    /// Compares each peer response with the LBS answer to the same query
    /// and reports the ones that contradict it.
    fn audit(&mut self, env: &mut NodeEnv<'_>, p: &PendingQuery, lbs: &LbsResponse) {
        let lbs_payload = LbsResponse::signed_bytes(&lbs.request, &lbs.records);
        for item in &p.evidence {
            if self.reported.contains(&item.pc.serial) {
                continue;
            }
            let Some(r) = ResponsePayload::from_signed_bytes(&item.payload) else {
                continue;
            };
            if contradicts(&lbs.request, &lbs.records, &r.records) {
                let claim = Claim::GroundTruth {
                    lbs_payload: lbs_payload.clone(),
                    lbs_signature: lbs.signature.clone(),
                };
                self.file_report(env, claim, vec![item.clone()]);
            }
        }
    }

    fn file_report(&mut self, env: &mut NodeEnv<'_>, claim: Claim, evidence: Vec<EvidenceItem>) {
        let Some(a) = &self.current else {
            return;
        };
        let suspects: BTreeSet<PcSerial> = evidence.iter().map(|e| e.pc.serial).collect();
        let report = MisbehaviorReport::new(
            claim,
            evidence,
            (*a.held.pc).clone(),
            &a.held.key,
            env.suite,
            &mut self.meter,
        );
        for s in &suspects {
            env.log.record(
                env.now,
                &self.index,
                "report",
                format_args!(
                    "claim={},suspect={s},reporter_pc={}",
                    report.claim.name(),
                    a.held.pc.serial
                ),
            );
        }
        self.reported.extend(suspects);
        self.stats.reports_filed += 1;
        env.out.push(Action::Report(Box::new(report)));
    }

    // ---- receiving ------------------------------------------------------

    fn drop_msg(&mut self, env: &mut NodeEnv<'_>, reason: DropReason, pc: PcSerial, query_id: u32) {
        *self.stats.drops.entry(reason).or_default() += 1;
        if env.log.verbose {
            env.log.record(
                env.now,
                &self.index,
                "drop",
                format_args!("reason={},pc={pc},q={query_id}", reason.name()),
            );
        }
    }

    /// PCA-signature check, skipped for a byte-identical PC already verified.
    fn resolve_pc(
        &mut self,
        env: &mut NodeEnv<'_>,
        pc_ref: &PcRef,
    ) -> Result<Arc<PseudonymCertificate>, DropReason> {
        let now = env.now;
        match pc_ref {
            PcRef::Attached(pc) => {
                if self.params.pseudonym_cache {
                    if let Some(c) = self.pc_cache.get(pc.serial, now) {
                        if Arc::ptr_eq(c, pc) || **c == **pc {
                            self.stats.pc_cache_hits += 1;
                            return Ok(c.clone());
                        }
                    }
                }
                self.stats.pc_verifications += 1;
                if !pc
                    .verify(env.pca.public_key(), env.suite, &mut self.meter)
                    .is_accept()
                {
                    return Err(DropReason::BadPseudonym);
                }
                if self.params.pseudonym_cache && pc.window.to > now {
                    self.pc_cache.insert(pc.clone());
                }
                Ok(pc.clone())
            }
            PcRef::Serial(s) => match self.pc_cache.get(*s, now) {
                Some(c) => {
                    self.stats.pc_cache_hits += 1;
                    Ok(c.clone())
                }
                None => Err(DropReason::UnknownPseudonym),
            },
        }
    }

    pub fn handle_delivery(&mut self, env: &mut NodeEnv<'_>, msg: &Arc<Message>) {
        if self
            .adversary
            .as_ref()
            .is_some_and(|a| a.kind == AdversaryKind::Replayer)
        {
            let before = self.captured;
            self.adversary_act(env, AdversaryEvent::Heard(msg));
            debug_assert!(self.captured >= before);
        }
        match &**msg {
            Message::Query(q) => self.serve(env, q),
            Message::Response(r) => self.on_response(env, r),
        }
    }

    /// Serving procedure for one received query.
    fn serve(&mut self, env: &mut NodeEnv<'_>, q: &PeerQuery) {
        let now = env.now;
        self.stats.query_receptions += 1;
        let serial = q.pc.serial();
        let id = q.payload.query_id;
        let pc = match self.resolve_pc(env, &q.pc) {
            Ok(pc) => pc,
            Err(r) => return self.drop_msg(env, r, serial, id),
        };
        if !pc.window.contains(now) {
            return self.drop_msg(env, DropReason::PseudonymNotValid, serial, id);
        }
        if !pc.window.contains(q.payload.issued_at)
            || !self.replay.is_fresh(q.payload.issued_at, now)
        {
            return self.drop_msg(env, DropReason::Stale, serial, id);
        }
        if self.replay.seen(serial, id, MessageKind::Query).is_some() {
            return self.drop_msg(env, DropReason::Replay, serial, id);
        }
        let tbs = q.payload.signed_bytes();
        if self.quota.is_exhausted(serial) {
            self.drop_msg(env, DropReason::Quota, serial, id);
            if self.params.report_quota && !self.reported.contains(&serial) {
                self.stats.msg_verifications += 1;
                if env
                    .suite
                    .verify(&tbs, &q.signature, &pc.public, &mut self.meter)
                    .is_accept()
                {
                    let mut evidence = self.quota_evidence.remove(&serial).unwrap_or_default();
                    evidence.push(EvidenceItem {
                        payload: tbs.to_vec(),
                        signature: q.signature.clone(),
                        pc: (*pc).clone(),
                    });
                    self.file_report(
                        env,
                        Claim::QuotaViolation {
                            quota: self.params.quota,
                        },
                        evidence,
                    );
                }
            }
            return;
        }
        self.stats.msg_verifications += 1;
        if !env
            .suite
            .verify(&tbs, &q.signature, &pc.public, &mut self.meter)
            .is_accept()
        {
            return self.drop_msg(env, DropReason::BadSignature, serial, id);
        }
        self.replay
            .remember(serial, id, MessageKind::Query, q.payload.issued_at, 0, now);
        self.quota.record(serial, pc.window.to);
        self.stats.accepted_queries += 1;
        if env.log.verbose {
            env.log.record(
                now,
                &self.index,
                "query_accepted",
                format_args!("pc={serial},q={id},count={}", self.quota.count(serial)),
            );
        }
        if self.params.report_quota {
            self.quota_evidence
                .entry(serial)
                .or_default()
                .push(EvidenceItem {
                    payload: tbs.to_vec(),
                    signature: q.signature.clone(),
                    pc: (*pc).clone(),
                });
        }
        self.popularity.observe(q.payload.poi_type);
        if self.current.is_none() {
            return;
        }
        let radius = q.payload.radius_m as f64;
        let records = self.cache.search(
            q.payload.poi_type,
            &q.payload.location,
            radius,
            self.params.serve_peer_origin,
        );
        if self
            .adversary
            .as_ref()
            .is_some_and(|a| a.kind == AdversaryKind::BogusResponder)
        {
            self.adversary_act(
                env,
                AdversaryEvent::QueryReceived {
                    query: q,
                    matches: &records,
                },
            );
            return;
        }
        if records.is_empty() {
            return;
        }
        if self.params.backoff {
            let delay = SimTime(self.rng.gen_range(0..=self.params.backoff_max.as_micros()));
            self.serving.insert(
                (serial, id),
                PendingServe {
                    dest: q.link.address,
                    wanted: q.payload.wanted,
                    records,
                    overheard: 0,
                },
            );
            env.out
                .push(Action::Schedule(now + delay, Timer::Backoff(serial, id)));
        } else {
            self.send_response(env, id, q.link.address, records);
        }
    }

    fn send_response(
        &mut self,
        env: &mut NodeEnv<'_>,
        query_id: u32,
        dest: u64,
        records: Vec<Poi>,
    ) {
        let now = env.now;
        let payload = ResponsePayload {
            query_id,
            issued_at: now,
            records,
        };
        let Some((signature, pc)) = self.sign_current(env, &payload.signed_bytes(), now) else {
            return;
        };
        env.log.record(
            now,
            &self.index,
            "response_sent",
            format_args!(
                "q={query_id},pc={},link={},ip={},dest={dest:012x},n={}",
                pc.serial(),
                self.link.address_str(),
                self.link.ip_str(),
                payload.records.len()
            ),
        );
        self.stats.responses_sent += 1;
        self.broadcast(
            env,
            Message::Response(PeerResponse {
                payload,
                signature,
                pc,
                link: self.link,
                dest,
            }),
        );
    }

    fn on_response(&mut self, env: &mut NodeEnv<'_>, r: &PeerResponse) {
        let now = env.now;
        self.stats.response_receptions += 1;
        let id = r.payload.query_id;
        let wanted = self.params.wanted_responses as usize;
        let mine = self
            .pending
            .get(&id)
            .is_some_and(|p| p.evidence.len() < wanted);
        let suppressing = self.serving.keys().any(|(_, i)| *i == id);
        let popular = self.params.popular_caching
            && r.payload
                .records
                .iter()
                .any(|p| self.popularity.is_popular(p.poi_type));
        if !(mine || suppressing || popular) {
            return;
        }
        let serial = r.pc.serial();
        let pc = match self.resolve_pc(env, &r.pc) {
            Ok(pc) => pc,
            Err(reason) => return self.drop_msg(env, reason, serial, id),
        };
        if !pc.window.contains(now) {
            return self.drop_msg(env, DropReason::PseudonymNotValid, serial, id);
        }
        if !pc.window.contains(r.payload.issued_at)
            || !self.replay.is_fresh(r.payload.issued_at, now)
        {
            return self.drop_msg(env, DropReason::Stale, serial, id);
        }
        let tbs = r.payload.signed_bytes();
        let d = digest(&tbs);
        if let Some(prev) = self.replay.seen(serial, id, MessageKind::Response) {
            if prev != d && mine {
                self.check_equivocation(env, id, &pc, &tbs, &r.signature);
            }
            return self.drop_msg(env, DropReason::Replay, serial, id);
        }
        self.stats.msg_verifications += 1;
        if !env
            .suite
            .verify(&tbs, &r.signature, &pc.public, &mut self.meter)
            .is_accept()
        {
            return self.drop_msg(env, DropReason::BadSignature, serial, id);
        }
        self.replay.remember(
            serial,
            id,
            MessageKind::Response,
            r.payload.issued_at,
            d,
            now,
        );
        if mine {
            let p = self.pending.get_mut(&id).expect("pending");
            combine(&mut p.combined, &r.payload.records);
            p.evidence.push(EvidenceItem {
                payload: tbs,
                signature: r.signature.clone(),
                pc: (*pc).clone(),
            });
            let n = p.evidence.len();
            self.stats.accepted_responses += 1;
            env.log.record(
                now,
                &self.index,
                "response_accepted",
                format_args!("q={id},pc={serial},n={n}"),
            );
            if n >= wanted {
                self.finalize(env, id);
            }
        } else {
            self.stats.overheard_responses += 1;
            for s in self.serving.iter_mut().filter(|((_, i), _)| *i == id) {
                s.1.overheard += 1;
            }
        }
        if popular {
            let pop = &self.popularity;
            let hot: Vec<Poi> = r
                .payload
                .records
                .iter()
                .filter(|p| pop.is_popular(p.poi_type))
                .cloned()
                .collect();
            self.stats.opportunistic_cached += hot.len() as u64;
            self.cache_records(&hot, now, Origin::Peer);
        }
    }

    fn check_equivocation(
        &mut self,
        env: &mut NodeEnv<'_>,
        id: u32,
        pc: &Arc<PseudonymCertificate>,
        tbs: &[u8],
        sig: &Signature,
    ) {
        if self.reported.contains(&pc.serial) {
            return;
        }
        self.stats.msg_verifications += 1;
        if !env
            .suite
            .verify(tbs, sig, &pc.public, &mut self.meter)
            .is_accept()
        {
            return;
        }
        let Some(first) = self.pending.get(&id).and_then(|p| {
            p.evidence
                .iter()
                .find(|e| e.pc.serial == pc.serial)
                .cloned()
        }) else {
            return;
        };
        let second = EvidenceItem {
            payload: tbs.to_vec(),
            signature: sig.clone(),
            pc: (**pc).clone(),
        };
        self.file_report(env, Claim::Equivocation, vec![first, second]);
    }

    // ---- timers ---------------------------------------------------------

    pub fn handle_timer(&mut self, env: &mut NodeEnv<'_>, timer: Timer) {
        match timer {
            Timer::QueryTimeout(id) => self.finalize(env, id),
            Timer::Backoff(serial, id) => {
                let Some(s) = self.serving.remove(&(serial, id)) else {
                    return;
                };
                if s.overheard >= s.wanted as u32 {
                    self.stats.responses_suppressed += 1;
                    env.log.record(
                        env.now,
                        &self.index,
                        "response_suppressed",
                        format_args!("q={id},overheard={}", s.overheard),
                    );
                } else {
                    self.send_response(env, id, s.dest, s.records);
                }
            }
            Timer::Rotate => self.rotate(env),
            Timer::AdversaryTick => self.adversary_act(env, AdversaryEvent::Tick),
            Timer::Replay(msg) => {
                env.log.record(
                    env.now,
                    &self.index,
                    "replayed",
                    format_args!("q={},pc={}", msg.query_id(), msg.pc().serial()),
                );
                self.stats.broadcasts += 1;
                env.out.push(Action::Broadcast(msg));
            }
        }
    }

    fn execute(&mut self, env: &mut NodeEnv<'_>, strategy: &AdversaryStrategy, o: Outbound) {
        let now = env.now;
        match o {
            Outbound::Respond {
                query_id,
                dest,
                records,
            } => self.send_response(env, query_id, dest, records),
            Outbound::Query { poi_type, location } => {
                self.send_query(env, poi_type, location);
            }
            Outbound::Duplicate(q) => {
                let extra: Vec<(Arc<PseudonymCertificate>, Signature)> = self
                    .successors
                    .iter()
                    .map(|h| {
                        (
                            h.pc.clone(),
                            env.suite
                                .sign(&q.payload.signed_bytes(), &h.key, &mut self.meter),
                        )
                    })
                    .collect();
                for (pc, signature) in extra {
                    env.log.record(
                        now,
                        &self.index,
                        "query_sent",
                        format_args!(
                            "q={},pc={},link={},ip={},type={},attached=1",
                            q.payload.query_id,
                            pc.serial,
                            self.link.address_str(),
                            self.link.ip_str(),
                            q.payload.poi_type
                        ),
                    );
                    self.broadcast(
                        env,
                        Message::Query(PeerQuery {
                            payload: q.payload.clone(),
                            signature,
                            pc: PcRef::Attached(pc),
                            link: self.link,
                        }),
                    );
                }
            }
            Outbound::Replay { message, at } => {
                self.captured += 1;
                if strategy.coalition {
                    env.out.push(Action::ShareCapture(message, at));
                } else {
                    env.out.push(Action::Schedule(at, Timer::Replay(message)));
                }
            }
            Outbound::NextTick(at) => env.out.push(Action::Schedule(at, Timer::AdversaryTick)),
            Outbound::RequestTicket { desired_start } => {
                env.log.record(
                    now,
                    &self.index,
                    "ticket_attempt",
                    format_args!("desired={}", desired_start.as_micros()),
                );
                self.acquire(env, desired_start);
            }
            Outbound::ReuseTicket => {
                let Some(ticket) = self.last_ticket.clone() else {
                    return;
                };
                let Ok(k) = env.suite.generate_keypair(
                    self.params.short_term_scheme,
                    &mut self.rng,
                    &mut self.meter,
                ) else {
                    return;
                };
                let req = ShortTermKeyRequest::new(&k, env.suite, &mut self.meter);
                match env.pca.issue_pseudonyms(&ticket, &[req]) {
                    Ok(_) => env.log.record(
                        now,
                        &"pca",
                        "violation",
                        format_args!("name=ticket_reuse,ticket={}", ticket.serial),
                    ),
                    Err(e) => env.log.record(
                        now,
                        &"pca",
                        "pc_denied",
                        format_args!("ticket={},reason={}", ticket.serial, deny_reason(&e)),
                    ),
                }
            }
        }
    }
}

fn deny_reason(e: &crate::credentials::CredentialError) -> &'static str {
    use crate::credentials::CredentialError as E;
    match e {
        E::OverlappingTicket { .. } => "overlap",
        E::Revoked(_) => "revoked",
        E::TicketReplay(_) => "ticket_replay",
        E::BadCertificate => "bad_certificate",
        E::BadRequestSignature => "bad_signature",
        _ => "other",
    }
}

fn lbs_reason(e: &crate::lbs::LbsError) -> &'static str {
    use crate::lbs::LbsError as E;
    match e {
        E::CredentialRequired => "credential_required",
        E::BadCredential => "bad_credential",
        E::BadSignature => "bad_signature",
        E::Unreachable => "unreachable",
    }
}
