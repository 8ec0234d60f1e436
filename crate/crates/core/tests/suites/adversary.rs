//! Bounds on what each adversary strategy achieves.

use std::collections::{BTreeMap, BTreeSet};

use p2plbs_core::adversary::end_to_end_eviction;
use p2plbs_core::harness::{LogRecord, Simulation};
use p2plbs_core::{NodeIndex, SimTime, Window};

use super::scenarios;

fn run(name: &str) -> Simulation {
    let mut sim = Simulation::new(scenarios::load(name)).unwrap();
    sim.run();
    assert!(
        sim.violations().is_empty(),
        "{name}: {:?}",
        sim.violations()
    );
    sim
}

fn pcs_of(log: &str, node: NodeIndex) -> BTreeSet<String> {
    let me = node.to_string();
    log.lines()
        .filter_map(LogRecord::parse)
        .filter(|r| r.entity == me && r.kind == "pc_installed")
        .map(|r| r.get("pc").unwrap().to_string())
        .collect()
}

/// Every victim accepts exactly `min(Q, offered)` queries under each of the
/// clogger's pseudonyms, i.e. per lifetime.
pub fn clogger_is_held_to_quota() -> String {
    let sim = run("clogger");
    let q = sim.config().protocol.quota as usize;
    let log = sim.log().as_str();
    let clogger = pcs_of(log, NodeIndex(0));
    let mut accepted: BTreeMap<(&str, &str), usize> = BTreeMap::new();
    let mut dropped: BTreeMap<(&str, &str), usize> = BTreeMap::new();
    for r in log.lines().filter_map(LogRecord::parse) {
        let Some(pc) = r.get("pc").filter(|pc| clogger.contains(*pc)) else {
            continue;
        };
        match (r.kind, r.get("reason")) {
            ("query_accepted", _) => *accepted.entry((r.entity, pc)).or_default() += 1,
            ("drop", Some("quota")) => *dropped.entry((r.entity, pc)).or_default() += 1,
            ("drop", Some(other)) => panic!("clogger query dropped for {other}"),
            _ => {}
        }
    }
    let pairs: BTreeSet<_> = accepted.keys().chain(dropped.keys()).copied().collect();
    assert!(!pairs.is_empty());
    let mut saturated = 0;
    for key in &pairs {
        let a = accepted.get(key).copied().unwrap_or(0);
        let offered = a + dropped.get(key).copied().unwrap_or(0);
        assert_eq!(a, offered.min(q), "{key:?}: accepted {a} of {offered}");
        saturated += usize::from(offered > q);
    }
    assert!(saturated > 0, "quota never reached");
    format!(
        "{} victim/pseudonym pairs, {saturated} saturated at Q={q}",
        pairs.len()
    )
}

/// Overlapping tickets and ticket reuse are refused, and the node never
/// holds two pseudonyms valid at the same instant.
pub fn sybil_never_holds_two_valid_pseudonyms() -> String {
    let sim = run("sybil");
    let log = sim.log().as_str();
    let records: Vec<LogRecord> = log.lines().filter_map(LogRecord::parse).collect();
    let me = NodeIndex(0).identity();
    let overlap_denied = records
        .iter()
        .filter(|r| {
            r.kind == "ticket_denied"
                && r.get("node") == Some(&me)
                && r.get("reason") == Some("overlap")
        })
        .count();
    let reuse_denied = records
        .iter()
        .filter(|r| r.kind == "pc_denied" && r.get("reason") == Some("ticket_replay"))
        .count();
    assert!(
        overlap_denied > 0 && reuse_denied > 0,
        "{overlap_denied} {reuse_denied}"
    );

    let mut windows: Vec<Window> = sim.nodes()[0].issued.iter().map(|(_, w)| *w).collect();
    windows.sort_by_key(|w| w.from);
    assert!(windows.len() > 2);
    assert!(
        windows.windows(2).all(|p| p[0].to <= p[1].from),
        "{windows:?}"
    );

    let window_of: BTreeMap<String, Window> = sim.nodes()[0]
        .issued
        .iter()
        .map(|(s, w)| (s.to_string(), *w))
        .collect();
    let mut accepted = 0;
    let mut premature = 0;
    for r in &records {
        let Some(w) = r.get("pc").and_then(|pc| window_of.get(pc)) else {
            continue;
        };
        if r.kind == "query_accepted" {
            assert!(w.contains(r.time), "accepted outside its window");
            accepted += 1;
        }
        if r.kind == "drop" && r.get("reason") == Some("pc_not_valid") {
            premature += 1;
        }
    }
    assert!(
        premature > 0,
        "duplicates under later pseudonyms never reached anyone"
    );
    format!(
        "{} pseudonyms, disjoint; {overlap_denied} overlapping tickets and {reuse_denied} reuses refused; {premature} premature copies dropped, {accepted} accepted",
        windows.len()
    )
}

/// Detection leads to resolution, revocation, and a refused ticket.
pub fn bogus_responder_is_evicted() -> String {
    let t = end_to_end_eviction(scenarios::load("bogus")).unwrap();
    assert!(t.is_complete(), "{t:#?}");
    let honest = end_to_end_eviction(scenarios::load("honest")).unwrap();
    assert_eq!((honest.reports(), honest.revocations()), (0, 0));
    format!(
        "{} reports, {} revocation, evicted {:?}; honest run: no reports",
        t.reports(),
        t.revocations(),
        t.evicted
    )
}

/// Replayed messages are dropped: no receiver accepts a (pseudonym, query)
/// pair twice, and the old copies fail the freshness or validity checks.
pub fn replays_are_dropped() -> String {
    let sim = run("replay");
    let log = sim.log().as_str();
    let records: Vec<LogRecord> = log.lines().filter_map(LogRecord::parse).collect();
    let replayed = records.iter().filter(|r| r.kind == "replayed").count();
    assert!(replayed > 0);
    let mut seen = BTreeSet::new();
    for r in records
        .iter()
        .filter(|r| matches!(r.kind, "query_accepted" | "response_accepted"))
    {
        assert!(
            seen.insert((r.entity, r.kind, r.get("pc"), r.get("q"))),
            "accepted twice: {r:?}"
        );
    }
    let late = records
        .iter()
        .filter(|r| r.kind == "drop" && matches!(r.get("reason"), Some("stale" | "pc_not_valid")))
        .count();
    assert!(late > 0);
    let first = records.iter().find(|r| r.kind == "replayed").unwrap().time;
    assert!(first >= SimTime::from_secs(600));
    format!("{replayed} replays, {late} dropped as stale or expired, none accepted")
}
