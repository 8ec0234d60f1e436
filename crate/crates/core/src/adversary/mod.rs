//! Misbehaving-node strategies. A strategy only decides what to attempt;
//! the hosting node executes the attempt with its legitimately issued
//! credentials, so every attack goes through the same checks as honest
//! traffic.

mod eviction;

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::lbs::Poi;
use crate::node::{Message, PeerQuery};
use crate::types::{PoiType, Point, SimTime, Window};

pub use eviction::{end_to_end_eviction, EvictionTranscript};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AdversaryKind {
    BogusResponder,
    Replayer,
    Clogger,
    SybilAttempter,
}

impl AdversaryKind {
    pub fn name(self) -> &'static str {
        match self {
            AdversaryKind::BogusResponder => "bogus-responder",
            AdversaryKind::Replayer => "replayer",
            AdversaryKind::Clogger => "clogger",
            AdversaryKind::SybilAttempter => "sybil-attempter",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdversaryStrategy {
    pub kind: AdversaryKind,
    /// Clogger query rate.
    #[serde(default = "default_clog_rate")]
    pub clog_rate_per_min: f64,
    /// Delay between capture and retransmission.
    #[serde(default = "default_replay_delay")]
    pub replay_delay_s: f64,
    /// Captures kept per replayer.
    #[serde(default = "default_max_captures")]
    pub max_captures: usize,
    /// Payload substituted into fabricated records.
    #[serde(default = "default_bogus_payload")]
    pub bogus_payload: String,
    /// Share captured messages with every other coalition member.
    #[serde(default)]
    pub coalition: bool,
}

fn default_clog_rate() -> f64 {
    100.0
}

fn default_replay_delay() -> f64 {
    600.0
}

fn default_max_captures() -> usize {
    50
}

fn default_bogus_payload() -> String {
    "CLOSED".to_string()
}

impl AdversaryStrategy {
    pub fn new(kind: AdversaryKind) -> Self {
        AdversaryStrategy {
            kind,
            clog_rate_per_min: default_clog_rate(),
            replay_delay_s: default_replay_delay(),
            max_captures: default_max_captures(),
            bogus_payload: default_bogus_payload(),
            coalition: false,
        }
    }
}

/// What a strategy may look at.
#[derive(Clone, Copy, Debug)]
pub struct NodeView {
    pub now: SimTime,
    pub position: Point,
    pub current_window: Option<Window>,
    pub captured: usize,
}

pub enum AdversaryEvent<'a> {
    Start,
    /// A verified query, with whatever the node's cache holds for it.
    QueryReceived {
        query: &'a PeerQuery,
        matches: &'a [Poi],
    },
    /// Any message heard on the channel.
    Heard(&'a Arc<Message>),
    QuerySent(&'a PeerQuery),
    Tick,
    Rotated,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Outbound {
    Respond {
        query_id: u32,
        dest: u64,
        records: Vec<Poi>,
    },
    Query {
        poi_type: PoiType,
        location: Point,
    },
    /// Re-sign an already sent query under every other PC held.
    Duplicate(PeerQuery),
    Replay {
        message: Arc<Message>,
        at: SimTime,
    },
    NextTick(SimTime),
    RequestTicket {
        desired_start: SimTime,
    },
    ReuseTicket,
}

/// Decides the adversary's reaction to one event.
pub fn act<R: Rng>(
    strategy: &AdversaryStrategy,
    view: &NodeView,
    event: AdversaryEvent<'_>,
    rng: &mut R,
) -> Vec<Outbound> {
    match (strategy.kind, event) {
        (AdversaryKind::BogusResponder, AdversaryEvent::QueryReceived { query, matches }) => {
            let q = &query.payload;
            let mut records: Vec<Poi> = matches
                .iter()
                .map(|p| Poi {
                    payload: strategy.bogus_payload.as_bytes().into(),
                    ..p.clone()
                })
                .collect();
            if records.is_empty() {
                records.push(Poi {
                    id: 0xffff_0000 | rng.gen::<u16>() as u32,
                    location: q.location,
                    poi_type: q.poi_type,
                    payload: strategy.bogus_payload.as_bytes().into(),
                });
            }
            vec![Outbound::Respond {
                query_id: q.query_id,
                dest: query.link.address,
                records,
            }]
        }
        (AdversaryKind::Replayer, AdversaryEvent::Heard(msg)) => {
            let fresh = msg.issued_at().abs_diff(view.now) <= SimTime::from_secs(1);
            if fresh && view.captured < strategy.max_captures {
                vec![Outbound::Replay {
                    message: msg.clone(),
                    at: view.now + SimTime::from_secs_f64(strategy.replay_delay_s),
                }]
            } else {
                Vec::new()
            }
        }
        (AdversaryKind::Clogger, AdversaryEvent::Start) => vec![next_tick(strategy, view, rng)],
        (AdversaryKind::Clogger, AdversaryEvent::Tick) => vec![
            Outbound::Query {
                poi_type: PoiType(rng.gen_range(0..4)),
                location: view.position,
            },
            next_tick(strategy, view, rng),
        ],
        (AdversaryKind::SybilAttempter, AdversaryEvent::Rotated) => {
            let mut out = vec![
                Outbound::RequestTicket {
                    desired_start: view.now,
                },
                Outbound::ReuseTicket,
            ];
            if let Some(w) = view.current_window {
                out.push(Outbound::RequestTicket {
                    desired_start: w.to,
                });
            }
            out
        }
        (AdversaryKind::SybilAttempter, AdversaryEvent::QuerySent(q)) => {
            vec![Outbound::Duplicate(q.clone())]
        }
        _ => Vec::new(),
    }
}

fn next_tick<R: Rng>(strategy: &AdversaryStrategy, view: &NodeView, rng: &mut R) -> Outbound {
    let mean_s = 60.0 / strategy.clog_rate_per_min.max(1e-9);
    let gap = -mean_s * (1.0 - rng.gen::<f64>()).ln();
    Outbound::NextTick(view.now + SimTime::from_secs_f64(gap).max(SimTime(1)))
}
