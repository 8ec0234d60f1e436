//! Issuance and resolution properties over randomized request sequences.

use std::collections::{BTreeMap, BTreeSet};

use p2plbs_core::credentials::{
    CertificateRequest, Claim, CredentialError, CredentialPolicy, EvidenceItem,
    LongTermCertificate, Ltca, MisbehaviorReport, PcSerial, Pca, PseudonymCertificate, Ra,
    ShortTermKeyRequest, TicketRequest,
};
use p2plbs_core::crypto::{CostMeter, CryptoSuite, KeyPair, SchemeId};
use p2plbs_core::lbs::Poi;
use p2plbs_core::node::{ProtocolJudge, QueryPayload, ResponsePayload};
use p2plbs_core::{PoiType, Point, SimTime, Window};
use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Client {
    id: String,
    key: KeyPair,
    ltc: LongTermCertificate,
}

fn enroll(ltca: &mut Ltca, suite: &CryptoSuite, rng: &mut ChaCha8Rng, id: &str) -> Client {
    let mut m = CostMeter::new();
    let key = suite
        .generate_keypair(SchemeId::ModelRsa1024, rng, &mut m)
        .unwrap();
    let ltc = ltca
        .register(&CertificateRequest::new(id, &key, suite, &mut m))
        .unwrap();
    Client {
        id: id.to_string(),
        key,
        ltc,
    }
}

fn overlapping(mut ws: Vec<Window>) -> bool {
    ws.sort_by_key(|w| w.from);
    ws.windows(2).any(|p| p[0].to > p[1].from)
}

/// Accepts exactly the requests an independent model of snapping and
/// overlap accepts, and never leaves two overlapping windows for a node.
pub fn ticket_windows_never_overlap(cases: u32) {
    let strategy = (
        any::<u64>(),
        1u64..=4,
        prop::collection::vec((0usize..3, 0u64..4000), 1..12),
    );
    let mut runner = TestRunner::new(Config {
        failure_persistence: None,
        ..Config::with_cases(cases)
    });
    let result = runner.run(&strategy, |(seed, grid_steps, requests)| {
        let grid = 60 * grid_steps;
        let policy = CredentialPolicy {
            ticket_duration: SimTime::from_secs(600),
            issuance_grid: SimTime::from_secs(if 600 % grid == 0 { grid } else { 60 }),
            pseudonym_lifetime: SimTime::from_secs(600),
        };
        let grid_us = policy.issuance_grid.as_micros();
        let suite = CryptoSuite::default();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut ltca = Ltca::new(suite.clone(), SchemeId::ModelRsa2048, policy, seed).unwrap();
        let clients: Vec<Client> = (0..3)
            .map(|i| enroll(&mut ltca, &suite, &mut rng, &format!("n{i}")))
            .collect();
        let mut model: BTreeMap<usize, Vec<(u64, u64)>> = BTreeMap::new();
        for (who, start_s) in requests {
            let c = &clients[who];
            let mut m = CostMeter::new();
            let desired = SimTime::from_secs(start_s);
            let got =
                ltca.request_ticket(&TicketRequest::new(&c.ltc, desired, &c.key, &suite, &mut m));
            let from = desired.as_micros().div_ceil(grid_us) * grid_us;
            let to = from + 600_000_000;
            let held = model.entry(who).or_default();
            let clash = held.iter().any(|&(a, b)| from < b && a < to);
            match got {
                Ok(t) => {
                    prop_assert!(!clash, "accepted an overlapping request");
                    prop_assert_eq!(t.window, Window::new(SimTime(from), SimTime(to)));
                    held.push((from, to));
                }
                Err(CredentialError::OverlappingTicket { .. }) => prop_assert!(clash),
                Err(e) => prop_assert!(false, "unexpected {e:?}"),
            }
        }
        for c in &clients {
            let ws: Vec<Window> = ltca
                .ledger()
                .tickets_of(&c.id)
                .iter()
                .map(|t| t.window)
                .collect();
            prop_assert!(!overlapping(ws));
        }
        Ok(())
    });
    if let Err(e) = result {
        panic!("{e}");
    }
}

struct World {
    suite: CryptoSuite,
    ltca: Ltca,
    pca: Pca,
    rng: ChaCha8Rng,
}

/// Per node: identity and its pseudonyms with their keys.
type Issued = Vec<(String, Vec<(KeyPair, PseudonymCertificate)>)>;

fn populate(seed: u64, nodes: usize) -> (World, Issued) {
    let suite = CryptoSuite::default();
    let policy = CredentialPolicy {
        ticket_duration: SimTime::from_secs(600),
        issuance_grid: SimTime::from_secs(60),
        pseudonym_lifetime: SimTime::from_secs(300),
    };
    let ltca = Ltca::new(suite.clone(), SchemeId::ModelRsa2048, policy, seed).unwrap();
    let pca = Pca::new(
        suite.clone(),
        SchemeId::ModelRsa2048,
        ltca.public_key().clone(),
        policy,
        seed ^ 0xabc,
    )
    .unwrap();
    let mut w = World {
        suite,
        ltca,
        pca,
        rng: ChaCha8Rng::seed_from_u64(seed),
    };
    let mut issued = Vec::new();
    for i in 0..nodes {
        let id = format!("node-{i:05}");
        let c = enroll(&mut w.ltca, &w.suite, &mut w.rng, &id);
        let mut pcs = Vec::new();
        for round in 0..w.rng.gen_range(1..=3u64) {
            let mut m = CostMeter::new();
            let start = SimTime::from_secs(700 * round + w.rng.gen_range(0..60));
            let ticket = w
                .ltca
                .request_ticket(&TicketRequest::new(&c.ltc, start, &c.key, &w.suite, &mut m))
                .unwrap();
            let keys: Vec<KeyPair> = (0..2)
                .map(|_| {
                    w.suite
                        .generate_keypair(SchemeId::ModelRsa1024, &mut w.rng, &mut m)
                        .unwrap()
                })
                .collect();
            let reqs: Vec<_> = keys
                .iter()
                .map(|k| ShortTermKeyRequest::new(k, &w.suite, &mut m))
                .collect();
            let batch = w.pca.issue_pseudonyms(&ticket, &reqs).unwrap();
            pcs.extend(keys.into_iter().zip(batch));
        }
        issued.push((id, pcs));
    }
    (w, issued)
}

pub fn ledgers_share_no_identifying_bytes() {
    for seed in 0..50 {
        let (w, issued) = populate(seed, 5);
        let ltca_text = w.ltca.ledger().to_snapshot();
        let pca_text = w.pca.ledger().to_snapshot();
        for (id, pcs) in &issued {
            assert!(!pca_text.contains(id.as_str()), "node id in PCA ledger");
            for (_, pc) in pcs {
                let serial = pc.serial.to_string();
                assert!(!ltca_text.contains(&serial), "pseudonym in LTCA ledger");
                assert!(pca_text.contains(&serial));
            }
        }
        for line in pca_text.lines().filter(|l| !l.starts_with('#')) {
            assert!(
                !line.contains("L-"),
                "long-term serial in PCA ledger: {line}"
            );
        }
        for line in ltca_text.lines().filter(|l| !l.starts_with('#')) {
            assert!(
                !line.contains("P-"),
                "pseudonym serial in LTCA ledger: {line}"
            );
        }
    }
}

fn evidence(
    w: &World,
    culprit: &(KeyPair, PseudonymCertificate),
    quota: Option<u32>,
) -> (Claim, Vec<EvidenceItem>) {
    let mut m = CostMeter::new();
    let pc = &culprit.1;
    let at = pc.window.from + SimTime::from_secs(5);
    let item = |payload: Vec<u8>, m: &mut CostMeter| EvidenceItem {
        signature: w.suite.sign(&payload, &culprit.0, m),
        payload,
        pc: pc.clone(),
    };
    match quota {
        Some(q) => {
            let items = (0..=q)
                .map(|id| {
                    let payload = QueryPayload {
                        query_id: id,
                        issued_at: at,
                        location: Point::new(10.0, 10.0),
                        poi_type: PoiType(1),
                        wanted: 3,
                        radius_m: 500,
                    };
                    item(payload.signed_bytes().to_vec(), &mut m)
                })
                .collect();
            (Claim::QuotaViolation { quota: q }, items)
        }
        None => {
            let response = |text: &str| ResponsePayload {
                query_id: 77,
                issued_at: at,
                records: vec![Poi {
                    id: 1,
                    location: Point::new(5.0, 5.0),
                    poi_type: PoiType(1),
                    payload: text.as_bytes().into(),
                }],
            };
            let a = item(response("open").signed_bytes(), &mut m);
            let b = item(response("closed").signed_bytes(), &mut m);
            (Claim::Equivocation, vec![a, b])
        }
    }
}

pub fn resolution_round_trips_without_false_identifications() {
    let mut resolved = 0;
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.gen_range(2..=6);
        let (mut w, issued) = populate(seed, n);
        let judge = ProtocolJudge {
            suite: w.suite.clone(),
            lbs_key: None,
            db: None,
        };
        let mut ra = Ra::new(w.suite.clone(), w.pca.public_key().clone(), Box::new(judge));
        let c = rng.gen_range(0..n);
        let r = (c + rng.gen_range(1..n)) % n;
        let culprit = &issued[c].1[rng.gen_range(0..issued[c].1.len())];
        let reporter = &issued[r].1[0];
        let quota = rng.gen_bool(0.5).then(|| rng.gen_range(1..=10));
        let (claim, items) = evidence(&w, culprit, quota);
        let mut m = CostMeter::new();
        let report = MisbehaviorReport::new(
            claim,
            items,
            reporter.1.clone(),
            &reporter.0,
            &w.suite,
            &mut m,
        );
        let res = ra.resolve(&report, &w.pca, &mut w.ltca, true).unwrap();
        assert_eq!(res.node_id, issued[c].0, "seed {seed}");
        assert!(res.pseudonyms.contains(&culprit.1.serial));
        let own: BTreeSet<PcSerial> = issued[c].1.iter().map(|(_, pc)| pc.serial).collect();
        assert!(
            res.pseudonyms.iter().all(|p| own.contains(p)),
            "seed {seed}: foreign pseudonym named"
        );
        assert!(w.ltca.ledger().is_revoked(&issued[c].0));
        resolved += 1;

        // The same shape of report against an honest node must not name anyone.
        let honest = &issued[r].1[0];
        let mut m = CostMeter::new();
        let (claim, mut items) = evidence(&w, honest, quota.map(|q| q + 1));
        items.pop();
        if matches!(claim, Claim::Equivocation) {
            items.truncate(1);
        }
        let report = MisbehaviorReport::new(
            claim,
            items,
            culprit.1.clone(),
            &culprit.0,
            &w.suite,
            &mut m,
        );
        assert!(
            ra.resolve(&report, &w.pca, &mut w.ltca, true).is_err(),
            "seed {seed}: honest node resolved"
        );
        assert!(!w.ltca.ledger().is_revoked(&issued[r].0));
    }
    assert_eq!(resolved, 100);
}
