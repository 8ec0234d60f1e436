//! Detection, report, resolution, revocation and the denied follow-up
//! request, driven through a full scenario run.

use std::collections::BTreeSet;

use serde::Serialize;

use crate::harness::{LogRecord, ScenarioConfig, SimError, Simulation};
use crate::types::{NodeIndex, SimTime};

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(tag = "step", rename_all = "snake_case")]
pub enum EvictionStep {
    Reported {
        at: SimTime,
        reporter: String,
        claim: String,
        suspect: String,
    },
    Resolved {
        at: SimTime,
        node: String,
        revoked: bool,
    },
    Rejected {
        at: SimTime,
        reason: String,
    },
    Revoked {
        at: SimTime,
        node: String,
    },
    TicketDenied {
        at: SimTime,
        node: String,
        reason: String,
    },
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct EvictionTranscript {
    /// Long-term identities configured as adversaries.
    pub adversaries: BTreeSet<String>,
    pub steps: Vec<EvictionStep>,
    /// Nodes the RA resolved that are not adversaries.
    pub false_identifications: BTreeSet<String>,
    /// Adversaries that were resolved, revoked, and then refused a ticket.
    pub evicted: BTreeSet<String>,
}

impl EvictionTranscript {
    /// Every adversary went through the whole chain and no honest node was named.
    pub fn is_complete(&self) -> bool {
        !self.adversaries.is_empty()
            && self.evicted == self.adversaries
            && self.false_identifications.is_empty()
    }

    pub fn reports(&self) -> usize {
        self.steps
            .iter()
            .filter(|s| matches!(s, EvictionStep::Reported { .. }))
            .count()
    }

    pub fn revocations(&self) -> usize {
        self.steps
            .iter()
            .filter(|s| matches!(s, EvictionStep::Revoked { .. }))
            .count()
    }
}

/// Runs `config`, then has every revoked node ask for a new ticket.
pub fn end_to_end_eviction(config: ScenarioConfig) -> Result<EvictionTranscript, SimError> {
    let adversaries: BTreeSet<String> = config
        .adversaries
        .iter()
        .map(|a| NodeIndex(a.node).identity())
        .collect();
    let mut sim = Simulation::new(config)?;
    sim.run();
    let revoked: Vec<NodeIndex> = sim
        .nodes()
        .iter()
        .filter(|n| sim.ltca().ledger().is_revoked(&n.node_id()))
        .map(|n| n.index)
        .collect();
    for n in revoked {
        sim.probe_ticket(n);
    }
    Ok(transcript(sim.log().as_str(), adversaries))
}

fn transcript(log: &str, adversaries: BTreeSet<String>) -> EvictionTranscript {
    let mut t = EvictionTranscript {
        adversaries,
        ..Default::default()
    };
    let mut revoked = BTreeSet::new();
    for r in log.lines().filter_map(LogRecord::parse) {
        let get = |k: &str| r.get(k).unwrap_or("").to_string();
        let step = match (r.entity, r.kind) {
            (node, "report") if node.starts_with("node-") => EvictionStep::Reported {
                at: r.time,
                reporter: node.to_string(),
                claim: get("claim"),
                suspect: get("suspect"),
            },
            ("ra", "resolved") => {
                let node = get("node");
                if !t.adversaries.contains(&node) {
                    t.false_identifications.insert(node.clone());
                }
                EvictionStep::Resolved {
                    at: r.time,
                    node,
                    revoked: get("revoked") == "1",
                }
            }
            ("ra", "report_rejected") => EvictionStep::Rejected {
                at: r.time,
                reason: get("reason"),
            },
            ("ltca", "revoked") => {
                revoked.insert(get("node"));
                EvictionStep::Revoked {
                    at: r.time,
                    node: get("node"),
                }
            }
            ("ltca", "ticket_denied") if revoked.contains(&get("node")) => {
                if get("reason") == "revoked" && t.adversaries.contains(&get("node")) {
                    t.evicted.insert(get("node"));
                }
                EvictionStep::TicketDenied {
                    at: r.time,
                    node: get("node"),
                    reason: get("reason"),
                }
            }
            _ => continue,
        };
        t.steps.push(step);
    }
    t
}
