//! Node-level protocol properties, checked on small scripted networks
//! against an independent reference model and on randomized runs.
//! Each check panics on the first counterexample.

use std::collections::{BTreeMap, BTreeSet};

use p2plbs_core::harness::{privacy_report, LogRecord, ScenarioConfig, Simulation};
use p2plbs_core::lbs::Poi;
use p2plbs_core::node::{NodeCache, Origin, PoiRecord};
use p2plbs_core::{NodeIndex, PoiType, Point, SimTime};
use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const RANGE: f64 = 100.0;
const RADIUS: f64 = 80.0;

fn config(positions: &[(f64, f64)], extra: &str) -> ScenarioConfig {
    let pos: Vec<String> = positions
        .iter()
        .map(|(x, y)| format!("[{x}, {y}]"))
        .collect();
    ScenarioConfig::from_toml(&format!(
        r#"
seed = 11
duration_s = 400
[area]
width_m = 250
height_m = 250
[placement]
positions = [{}]
[radio]
range_m = {RANGE}
[workload]
rate_per_min = 0
poi_types = [{{poi_type = 1, weight = 1.0}}, {{poi_type = 2, weight = 1.0}}]
[lbs]
pois_per_type = 30
[protocol]
radius_m = {RADIUS}
popular_caching = false
{extra}
"#,
        pos.join(", ")
    ))
    .unwrap()
}

fn preload(sim: &mut Simulation, node: usize, pois: &[Poi]) {
    for p in pois {
        sim.node_mut(NodeIndex(node)).cache.insert(
            PoiRecord {
                poi: p.clone(),
                fetched_at: SimTime::ZERO,
                origin: Origin::Lbs,
            },
            &|_| false,
        );
    }
}

// ---- reference model --------------------------------------------------

/// Independent model of the two query algorithms with back-off disabled:
/// every neighbor holding a match answers at once, answers arrive in node
/// index order, and the requester combines the first `wanted` of them.
struct Reference {
    positions: Vec<(f64, f64)>,
    pois: Vec<Poi>,
    caches: Vec<BTreeSet<u32>>,
    wanted: usize,
}

#[derive(Debug, PartialEq, Eq)]
struct Outcome {
    source: &'static str,
    responses_sent: usize,
    responses_accepted: usize,
}

impl Reference {
    fn matches(&self, ids: &BTreeSet<u32>, t: PoiType, at: (f64, f64)) -> BTreeSet<u32> {
        self.pois
            .iter()
            .filter(|p| ids.contains(&p.id) && p.poi_type == t)
            .filter(|p| {
                let (dx, dy) = (p.location.x - at.0, p.location.y - at.1);
                dx * dx + dy * dy <= RADIUS * RADIUS
            })
            .map(|p| p.id)
            .collect()
    }

    fn need(&mut self, i: usize, t: PoiType) -> Outcome {
        let q = Point::new(self.positions[i].0, self.positions[i].1).quantized();
        let at = (q.x, q.y);
        if !self.matches(&self.caches[i], t, at).is_empty() {
            return Outcome {
                source: "local",
                responses_sent: 0,
                responses_accepted: 0,
            };
        }
        let (xi, yi) = self.positions[i];
        let answers: Vec<BTreeSet<u32>> = (0..self.positions.len())
            .filter(|&j| j != i)
            .filter(|&j| {
                let (xj, yj) = self.positions[j];
                (xi - xj).hypot(yi - yj) <= RANGE
            })
            .map(|j| self.matches(&self.caches[j], t, at))
            .filter(|m| !m.is_empty())
            .collect();
        if answers.is_empty() {
            let all: BTreeSet<u32> = self.pois.iter().map(|p| p.id).collect();
            let truth = self.matches(&all, t, at);
            self.caches[i].extend(truth);
            return Outcome {
                source: "lbs",
                responses_sent: 0,
                responses_accepted: 0,
            };
        }
        let used = answers.len().min(self.wanted);
        for a in &answers[..used] {
            self.caches[i].extend(a.iter().copied());
        }
        Outcome {
            source: "peer",
            responses_sent: answers.len(),
            responses_accepted: used,
        }
    }
}

struct Trace {
    positions: Vec<(f64, f64)>,
    warm: Vec<Vec<PoiType>>,
    needs: Vec<(SimTime, usize, PoiType)>,
}

fn trace(seed: u64) -> Trace {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(2..=5);
    let positions = (0..n)
        .map(|_| (rng.gen_range(0..250) as f64, rng.gen_range(0..250) as f64))
        .collect();
    let warm = (0..n)
        .map(|_| {
            [1u16, 2]
                .into_iter()
                .filter(|_| rng.gen_bool(0.5))
                .map(PoiType)
                .collect()
        })
        .collect();
    let needs = (0..rng.gen_range(4..=8))
        .map(|k| {
            (
                SimTime::from_secs(5 + 20 * k) + SimTime::from_millis(rng.gen_range(0..1000)),
                rng.gen_range(0..n),
                PoiType(rng.gen_range(1..=2)),
            )
        })
        .collect();
    Trace {
        positions,
        warm,
        needs,
    }
}

pub fn scripted_traces_match_the_reference_model() {
    let mut seen: BTreeMap<&'static str, usize> = BTreeMap::new();
    for seed in 0..20 {
        let tr = trace(seed);
        let mut sim = Simulation::new(config(&tr.positions, "backoff = false")).unwrap();
        let pois: Vec<Poi> = sim.lbs().database().iter().cloned().collect();
        let mut reference = Reference {
            positions: tr.positions.clone(),
            pois: pois.clone(),
            caches: vec![BTreeSet::new(); tr.positions.len()],
            wanted: sim.config().protocol.wanted_responses as usize,
        };
        for (i, types) in tr.warm.iter().enumerate() {
            let (x, y) = tr.positions[i];
            let here = Point::new(x, y).quantized();
            let mine: Vec<Poi> = pois
                .iter()
                .filter(|p| types.contains(&p.poi_type) && p.location.distance(&here) <= RADIUS)
                .cloned()
                .collect();
            reference.caches[i].extend(mine.iter().map(|p| p.id));
            preload(&mut sim, i, &mine);
        }
        for &(at, i, t) in &tr.needs {
            let p = tr.positions[i];
            assert!(sim.schedule_need(at, NodeIndex(i), t, Point::new(p.0, p.1)));
        }
        sim.run();
        assert!(
            sim.violations().is_empty(),
            "seed {seed}: {:?}",
            sim.violations()
        );

        let log = sim.log().as_str().to_string();
        let records: Vec<LogRecord> = log.lines().filter_map(LogRecord::parse).collect();
        for (k, &(at, i, t)) in tr.needs.iter().enumerate() {
            let expect = reference.need(i, t);
            let me = NodeIndex(i).to_string();
            let done = records
                .iter()
                .find(|r| r.entity == me && r.kind == "need_done" && r.time >= at)
                .unwrap_or_else(|| panic!("seed {seed} need {k}: not finished"));
            let q = records
                .iter()
                .find(|r| r.entity == me && r.kind == "query_sent" && r.time == at)
                .and_then(|r| r.get("q"));
            let count = |kind: &str| {
                q.map_or(0, |q| {
                    records
                        .iter()
                        .filter(|r| r.kind == kind && r.get("q") == Some(q))
                        .count()
                })
            };
            let got = Outcome {
                source: match done.get("source").unwrap() {
                    "local" => "local",
                    "peer" => "peer",
                    "lbs" => "lbs",
                    other => panic!("unexpected source {other}"),
                },
                responses_sent: count("response_sent"),
                responses_accepted: count("response_accepted"),
            };
            assert_eq!(got, expect, "seed {seed} need {k} ({i}, {t:?})");
            *seen.entry(expect.source).or_default() += 1;
        }
        for (i, node) in sim.nodes().iter().enumerate() {
            let ids: BTreeSet<u32> = node.cache.records().map(|r| r.poi.id).collect();
            assert_eq!(ids, reference.caches[i], "seed {seed} cache of node {i}");
        }
    }
    for source in ["local", "peer", "lbs"] {
        assert!(seen.get(source).copied().unwrap_or(0) >= 5, "{seen:?}");
    }
}

// ---- randomized properties --------------------------------------------

/// All nodes within range of each other. Node 0 keeps no cache and asks;
/// every other node holds the whole database.
fn clique(seed: u64, n: usize, extra: &str, instant_radio: bool) -> Simulation {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let positions: Vec<(f64, f64)> = (0..n)
        .map(|_| (rng.gen_range(90.0..160.0), rng.gen_range(90.0..160.0)))
        .collect();
    let mut cfg = config(&positions, extra);
    if instant_radio {
        cfg.radio.propagation_delay_ms = 0.0;
        cfg.radio.loss_probability = 0.0;
    }
    let mut sim = Simulation::new(cfg).unwrap();
    let pois: Vec<Poi> = sim.lbs().database().iter().cloned().collect();
    for i in 1..n {
        preload(&mut sim, i, &pois);
    }
    sim.node_mut(NodeIndex(0)).cache = NodeCache::new(0, 250.0);
    for k in 0..8u64 {
        let t = PoiType(1 + (k % 2) as u16);
        let at = SimTime::from_secs(5 + 15 * k) + SimTime::from_micros(rng.gen_range(0..1_000_000));
        let p = positions[0];
        sim.schedule_need(at, NodeIndex(0), t, Point::new(p.0, p.1));
    }
    sim
}

fn per_query(log: &str, kind: &str) -> BTreeMap<String, usize> {
    let mut m = BTreeMap::new();
    for r in log
        .lines()
        .filter_map(LogRecord::parse)
        .filter(|r| r.kind == kind)
    {
        *m.entry(r.get("q").unwrap().to_string()).or_default() += 1;
    }
    m
}

fn run_cases<S: Strategy>(
    cases: u32,
    strategy: S,
    test: impl Fn(S::Value) -> Result<(), TestCaseError>,
) {
    let mut runner = TestRunner::new(Config {
        failure_persistence: None,
        ..Config::with_cases(cases)
    });
    if let Err(e) = runner.run(&strategy, test) {
        panic!("{e}");
    }
}

pub fn at_most_wanted_responses_are_combined() {
    run_cases(
        24,
        (any::<u64>(), 3usize..=5, 1u8..=3),
        |(seed, n, wanted)| {
            let extra = format!("backoff = false\nwanted_responses = {wanted}");
            let mut sim = clique(seed, n, &extra, false);
            sim.run();
            prop_assert_eq!(per_query(sim.log().as_str(), "query_sent").len(), 8);
            let log = sim.log().as_str();
            for (q, k) in per_query(log, "response_accepted") {
                prop_assert!(k <= wanted as usize, "q={} accepted {}", q, k);
            }
            for r in log
                .lines()
                .filter_map(LogRecord::parse)
                .filter(|r| r.kind == "response_accepted")
            {
                prop_assert!(r.get("n").unwrap().parse::<usize>().unwrap() <= wanted as usize);
            }
            Ok(())
        },
    );
}

pub fn backoff_bounds_responses_network_wide() {
    run_cases(
        24,
        (any::<u64>(), 3usize..=5, 1u8..=3),
        |(seed, n, wanted)| {
            let extra = format!("wanted_responses = {wanted}");
            let mut sim = clique(seed, n, &extra, true);
            sim.run();
            let sent = per_query(sim.log().as_str(), "response_sent");
            prop_assert!(!sent.is_empty());
            for (q, k) in &sent {
                prop_assert!(*k <= wanted as usize, "q={} answered {} times", q, k);
            }
            Ok(())
        },
    );
}

pub fn quota_caps_accepted_queries_per_pseudonym() {
    let positions = [
        (100.0, 100.0),
        (130.0, 100.0),
        (100.0, 130.0),
        (140.0, 140.0),
    ];
    let extra = "quota = 10\nreport_quota = false";
    let mut cfg = config(&positions, extra);
    cfg.verbose_log = true;
    cfg.duration_s = 1500.0;
    cfg.adversaries =
        vec![toml::from_str("node = 0\nkind = \"clogger\"\nclog_rate_per_min = 100").unwrap()];
    let mut sim = Simulation::new(cfg).unwrap();
    sim.run();
    let mut accepted: BTreeMap<(String, String), usize> = BTreeMap::new();
    for r in sim.log().records().filter(|r| r.kind == "query_accepted") {
        *accepted
            .entry((r.entity.to_string(), r.get("pc").unwrap().to_string()))
            .or_default() += 1;
    }
    assert!(!accepted.is_empty());
    for ((rx, pc), k) in &accepted {
        assert!(*k <= 10, "{rx} accepted {k} under {pc}");
    }
    let drops = sim
        .log()
        .records()
        .filter(|r| r.kind == "drop" && r.get("reason") == Some("quota"))
        .count();
    assert!(drops > 0);
}

fn accepted_lines(log: &str) -> Vec<String> {
    log.lines()
        .filter(|l| {
            l.contains("|query_accepted|")
                || l.contains("|response_accepted|")
                || l.contains("|need_done|")
        })
        .map(str::to_string)
        .collect()
}

pub fn pseudonym_cache_does_not_change_what_is_accepted() {
    let text = |pc_cache: bool| {
        format!(
            r#"
seed = 21
duration_s = 1200
verbose_log = true
[area]
width_m = 200
height_m = 200
[placement]
nodes = 10
[workload]
rate_per_min = 3
poi_types = [{{poi_type = 1, weight = 1.0}}, {{poi_type = 2, weight = 1.0}}, {{poi_type = 3, weight = 1.0}}]
[protocol]
pseudonym_cache = {pc_cache}
cache_capacity = 20
"#
        )
    };
    let mut with = Simulation::new(ScenarioConfig::from_toml(&text(true)).unwrap()).unwrap();
    let mut without = Simulation::new(ScenarioConfig::from_toml(&text(false)).unwrap()).unwrap();
    with.run();
    without.run();
    let a: BTreeSet<String> = accepted_lines(with.log().as_str()).into_iter().collect();
    let b: BTreeSet<String> = accepted_lines(without.log().as_str()).into_iter().collect();
    assert!(a.iter().any(|l| l.contains("|query_accepted|")));
    assert_eq!(a, b);
    let (ma, mb) = (with.metrics(), without.metrics());
    assert!(ma.pc_cache_hits > 0);
    assert_eq!(mb.pc_cache_hits, 0);
    assert!(ma.pc_verifications < mb.pc_verifications);
}

pub fn identifiers_do_not_survive_rotation() {
    let cfg = ScenarioConfig::from_toml(
        r#"
seed = 4
duration_s = 2400
[area]
width_m = 200
height_m = 200
[placement]
nodes = 12
[workload]
rate_per_min = 2
poi_types = [{poi_type = 1, weight = 1.0}, {poi_type = 2, weight = 1.0}, {poi_type = 3, weight = 1.0}]
[protocol]
cache_capacity = 10
"#,
    )
    .unwrap();
    let tau = cfg.policy.pseudonym_lifetime_s;
    let mut sim = Simulation::new(cfg).unwrap();
    sim.run();
    let installs = sim
        .log()
        .records()
        .filter(|r| r.kind == "pc_installed")
        .count();
    assert!(installs >= 12 * 4, "{installs}");
    let r = privacy_report(sim.log().as_str());
    assert!(r.eavesdropper.messages > 100);
    assert!(
        r.rotation_unlinkable(),
        "{:?}",
        r.eavesdropper.spanning_rotation
    );
    assert!((r.eavesdropper.max_linkable_span_us as f64) < tau * 1e6);
}

pub fn node_without_pseudonym_stays_silent() {
    let positions = [(100.0, 100.0), (130.0, 100.0), (100.0, 130.0)];
    let mut cfg = config(&positions, "");
    cfg.duration_s = 1900.0;
    let mut sim = Simulation::new(cfg).unwrap();
    let victim = NodeIndex(1);
    let pois: Vec<Poi> = sim.lbs().database().iter().cloned().collect();
    preload(&mut sim, 1, &pois);
    // Needs from everybody across three pseudonym lifetimes.
    for k in 0..18u64 {
        for (i, p) in positions.iter().copied().enumerate().take(3) {
            sim.schedule_need(
                SimTime::from_secs(30 + 100 * k + i as u64),
                NodeIndex(i),
                PoiType(2),
                Point::new(p.0, p.1),
            );
        }
    }
    sim.run();
    assert!(sim.violations().is_empty(), "{:?}", sim.violations());
    // Baseline: the victim answers while it holds pseudonyms.
    let sends = |sim: &Simulation| {
        sim.log()
            .records()
            .filter(|r| {
                r.entity == victim.to_string() && matches!(r.kind, "query_sent" | "response_sent")
            })
            .count()
    };
    assert!(sends(&sim) > 0);

    let mut cfg = config(&positions, "");
    cfg.duration_s = 1900.0;
    let mut sim = Simulation::new(cfg).unwrap();
    preload(&mut sim, 1, &pois);
    let id = sim.nodes()[1].node_id();
    let end_of_first = sim.nodes()[1].current_pc().unwrap().window.to;
    sim.revoke(&id);
    for k in 0..18u64 {
        for (i, p) in positions.iter().copied().enumerate().take(3) {
            sim.schedule_need(
                SimTime::from_secs(30 + 100 * k + i as u64),
                NodeIndex(i),
                PoiType(2),
                Point::new(p.0, p.1),
            );
        }
    }
    sim.run();
    let late_sends = sim
        .log()
        .records()
        .filter(|r| r.entity == victim.to_string() && r.time >= end_of_first)
        .filter(|r| matches!(r.kind, "query_sent" | "response_sent"))
        .count();
    assert_eq!(late_sends, 0);
    assert!(sim
        .log()
        .records()
        .any(|r| r.entity == victim.to_string() && r.kind == "p2p_silent"));
    // Its needs still complete through the LBS.
    let victim_done: Vec<_> = sim
        .log()
        .records()
        .filter(|r| {
            r.entity == victim.to_string() && r.kind == "need_done" && r.time >= end_of_first
        })
        .map(|r| r.get("source").unwrap().to_string())
        .collect();
    assert!(!victim_done.is_empty());
    assert!(
        victim_done.iter().all(|s| s == "local" || s == "lbs"),
        "{victim_done:?}"
    );
}
