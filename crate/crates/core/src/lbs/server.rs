use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::db::{decode_pois, encode_pois, Poi, PoiDatabase};
use crate::credentials::{LongTermCertificate, PcSerial, PseudonymCertificate};
use crate::crypto::{CostMeter, CryptoError, CryptoSuite, KeyPair, PublicKey, SchemeId, Signature};
use crate::types::{NodeIndex, PoiType, Point, SimTime};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ResponseMode {
    /// Every response carries a server signature.
    #[default]
    Signed,
    /// Integrity comes from the (assumed) secure channel only.
    ChannelOnly,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AccessMode {
    /// Anyone may query; credentials are logged when presented.
    #[default]
    Open,
    /// A verifying long-term or pseudonymous credential is required.
    Subscriber,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LbsError {
    #[error("credential required")]
    CredentialRequired,
    #[error("credential does not verify")]
    BadCredential,
    #[error("request signature does not verify")]
    BadSignature,
    #[error("service unreachable")]
    Unreachable,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LbsRequest {
    pub location: Point,
    pub poi_type: PoiType,
    pub radius_m: f64,
    pub issued_at: SimTime,
}

impl LbsRequest {
    pub fn signed_bytes(&self) -> Vec<u8> {
        let mut buf = b"lbs-req/v1".to_vec();
        self.encode(&mut buf);
        buf
    }

    fn encode(&self, buf: &mut Vec<u8>) {
        buf.extend_from_slice(&(self.location.x as f32).to_be_bytes());
        buf.extend_from_slice(&(self.location.y as f32).to_be_bytes());
        buf.extend_from_slice(&self.poi_type.0.to_be_bytes());
        buf.extend_from_slice(&self.radius_m.to_be_bytes());
        buf.extend_from_slice(&self.issued_at.as_micros().to_be_bytes());
    }
}

/// What the node shows the server alongside a request.
#[derive(Clone, Debug, PartialEq)]
pub enum Credential {
    LongTerm {
        ltc: LongTermCertificate,
        signature: Signature,
    },
    Pseudonym {
        pc: Arc<PseudonymCertificate>,
        signature: Signature,
    },
    Anonymous,
}

/// The identifier the server can record for a request.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum PresentedCredential {
    LongTerm(String),
    Pseudonym(PcSerial),
    Anonymous,
}

impl fmt::Display for PresentedCredential {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PresentedCredential::LongTerm(id) => write!(f, "{id}"),
            PresentedCredential::Pseudonym(pc) => write!(f, "{pc}"),
            PresentedCredential::Anonymous => write!(f, "anonymous"),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LbsResponse {
    pub request: LbsRequest,
    pub records: Vec<Poi>,
    pub signature: Option<Signature>,
}

impl LbsResponse {
    /// Bytes covered by the server signature; also the self-contained
    /// ground-truth statement submitted with misbehavior reports.
    pub fn signed_bytes(request: &LbsRequest, records: &[Poi]) -> Vec<u8> {
        let mut buf = b"lbs-resp/v1".to_vec();
        request.encode(&mut buf);
        encode_pois(records, &mut buf);
        buf
    }

    pub fn decode(bytes: &[u8]) -> Option<(LbsRequest, Vec<Poi>)> {
        let rest = bytes.strip_prefix(b"lbs-resp/v1".as_slice())?;
        if rest.len() < 26 {
            return None;
        }
        let f32_at = |i: usize| f32::from_be_bytes(rest[i..i + 4].try_into().unwrap()) as f64;
        let request = LbsRequest {
            location: Point::new(f32_at(0), f32_at(4)),
            poi_type: PoiType(u16::from_be_bytes(rest[8..10].try_into().unwrap())),
            radius_m: f64::from_be_bytes(rest[10..18].try_into().unwrap()),
            issued_at: SimTime(u64::from_be_bytes(rest[18..26].try_into().unwrap())),
        };
        let (records, tail) = decode_pois(&rest[26..])?;
        tail.is_empty().then_some((request, records))
    }
}

/// One served request as the server saw it. `truth` is filled in by the
/// simulator for scoring and is never consulted by the server.
#[derive(Clone, Debug, PartialEq)]
pub struct LogEntry {
    pub at: SimTime,
    pub credential: PresentedCredential,
    pub location: Point,
    pub poi_type: PoiType,
    pub truth: Option<NodeIndex>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ServerLog {
    entries: Vec<LogEntry>,
}

impl ServerLog {
    pub fn entries(&self) -> &[LogEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// What the server alone can link: requests grouped by presented credential.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CuriosityReport {
    pub group_sizes: BTreeMap<PresentedCredential, usize>,
    /// Per true node, the largest single group containing its requests.
    pub max_linkable: BTreeMap<NodeIndex, usize>,
}

pub struct LbsServer {
    db: Arc<PoiDatabase>,
    suite: CryptoSuite,
    key: KeyPair,
    ltca_key: PublicKey,
    pca_key: PublicKey,
    pub response_mode: ResponseMode,
    pub access: AccessMode,
    pub reachable: bool,
    log: ServerLog,
    pub meter: CostMeter,
}

impl LbsServer {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        db: Arc<PoiDatabase>,
        suite: CryptoSuite,
        scheme: SchemeId,
        ltca_key: PublicKey,
        pca_key: PublicKey,
        response_mode: ResponseMode,
        access: AccessMode,
        seed: u64,
    ) -> Result<Self, CryptoError> {
        let mut meter = CostMeter::new();
        let key =
            suite.generate_keypair(scheme, &mut ChaCha8Rng::seed_from_u64(seed), &mut meter)?;
        Ok(LbsServer {
            db,
            suite,
            key,
            ltca_key,
            pca_key,
            response_mode,
            access,
            reachable: true,
            log: ServerLog::default(),
            meter,
        })
    }

    pub fn public_key(&self) -> &PublicKey {
        self.key.public()
    }

    pub fn database(&self) -> &Arc<PoiDatabase> {
        &self.db
    }

    pub fn log(&self) -> &ServerLog {
        &self.log
    }

    fn check(
        &mut self,
        request: &LbsRequest,
        credential: &Credential,
    ) -> Result<PresentedCredential, LbsError> {
        let tbs = request.signed_bytes();
        let (presented, verdict) = match credential {
            Credential::Anonymous => {
                if self.access == AccessMode::Subscriber {
                    return Err(LbsError::CredentialRequired);
                }
                return Ok(PresentedCredential::Anonymous);
            }
            Credential::LongTerm { ltc, signature } => {
                if !ltc
                    .verify(&self.ltca_key, &self.suite, &mut self.meter)
                    .is_accept()
                {
                    return Err(LbsError::BadCredential);
                }
                let v = self
                    .suite
                    .verify(&tbs, signature, &ltc.public, &mut self.meter);
                (PresentedCredential::LongTerm(ltc.node_id.clone()), v)
            }
            Credential::Pseudonym { pc, signature } => {
                if !pc.window.contains(request.issued_at)
                    || !pc
                        .verify(&self.pca_key, &self.suite, &mut self.meter)
                        .is_accept()
                {
                    return Err(LbsError::BadCredential);
                }
                let v = self
                    .suite
                    .verify(&tbs, signature, &pc.public, &mut self.meter);
                (PresentedCredential::Pseudonym(pc.serial), v)
            }
        };
        if !verdict.is_accept() {
            return Err(LbsError::BadSignature);
        }
        Ok(presented)
    }

    /// Answers faithfully: every POI of the requested type within the radius.
    pub fn answer(
        &mut self,
        request: &LbsRequest,
        credential: &Credential,
        now: SimTime,
        truth: Option<NodeIndex>,
    ) -> Result<LbsResponse, LbsError> {
        if !self.reachable {
            return Err(LbsError::Unreachable);
        }
        let presented = self.check(request, credential)?;
        let records: Vec<Poi> = self
            .db
            .within(request.poi_type, &request.location, request.radius_m)
            .into_iter()
            .cloned()
            .collect();
        self.log.entries.push(LogEntry {
            at: now,
            credential: presented,
            location: request.location,
            poi_type: request.poi_type,
            truth,
        });
        let signature = match self.response_mode {
            ResponseMode::Signed => Some(self.suite.sign(
                &LbsResponse::signed_bytes(request, &records),
                &self.key,
                &mut self.meter,
            )),
            ResponseMode::ChannelOnly => None,
        };
        Ok(LbsResponse {
            request: request.clone(),
            records,
            signature,
        })
    }

    pub fn curiosity_report(&self) -> CuriosityReport {
        curiosity_report(self.log.entries())
    }
}

pub fn curiosity_report(entries: &[LogEntry]) -> CuriosityReport {
    let mut group_sizes: BTreeMap<PresentedCredential, usize> = BTreeMap::new();
    let mut per_group_node: BTreeMap<(&PresentedCredential, NodeIndex), usize> = BTreeMap::new();
    for e in entries {
        *group_sizes.entry(e.credential.clone()).or_default() += 1;
        if let Some(n) = e.truth {
            *per_group_node.entry((&e.credential, n)).or_default() += 1;
        }
    }
    let mut max_linkable: BTreeMap<NodeIndex, usize> = BTreeMap::new();
    for ((_, node), own) in per_group_node {
        let slot = max_linkable.entry(node).or_default();
        *slot = (*slot).max(own);
    }
    CuriosityReport {
        group_sizes,
        max_linkable,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::credentials::{
        CertificateRequest, CredentialPolicy, Ltca, Pca, ShortTermKeyRequest, TicketRequest,
    };
    use crate::netsim::Area;

    struct Fixture {
        suite: CryptoSuite,
        ltca: Ltca,
        pca: Pca,
        server: LbsServer,
        rng: ChaCha8Rng,
    }

    fn fixture(mode: ResponseMode, access: AccessMode) -> Fixture {
        let suite = CryptoSuite::default();
        let policy = CredentialPolicy::default();
        let ltca = Ltca::new(suite.clone(), SchemeId::ModelRsa2048, policy, 1).unwrap();
        let pca = Pca::new(
            suite.clone(),
            SchemeId::ModelRsa2048,
            ltca.public_key().clone(),
            policy,
            2,
        )
        .unwrap();
        let area = Area {
            width_m: 1000.0,
            height_m: 1000.0,
            torus: false,
        };
        let db = PoiDatabase::generate(
            area,
            &[PoiType(1), PoiType(2)],
            200,
            &mut ChaCha8Rng::seed_from_u64(3),
        );
        let server = LbsServer::new(
            Arc::new(db),
            suite.clone(),
            SchemeId::ModelRsa2048,
            ltca.public_key().clone(),
            pca.public_key().clone(),
            mode,
            access,
            4,
        )
        .unwrap();
        Fixture {
            suite,
            ltca,
            pca,
            server,
            rng: ChaCha8Rng::seed_from_u64(5),
        }
    }

    fn request(t: u64) -> LbsRequest {
        LbsRequest {
            location: Point::new(500.0, 500.0),
            poi_type: PoiType(1),
            radius_m: 120.0,
            issued_at: SimTime::from_secs(t),
        }
    }

    fn enroll(
        f: &mut Fixture,
        id: &str,
    ) -> (
        KeyPair,
        LongTermCertificate,
        Arc<PseudonymCertificate>,
        KeyPair,
    ) {
        let mut m = CostMeter::new();
        let lk = f
            .suite
            .generate_keypair(SchemeId::ModelRsa1024, &mut f.rng, &mut m)
            .unwrap();
        let ltc = f
            .ltca
            .register(&CertificateRequest::new(id, &lk, &f.suite, &mut m))
            .unwrap();
        let ticket = f
            .ltca
            .request_ticket(&TicketRequest::new(
                &ltc,
                SimTime::ZERO,
                &lk,
                &f.suite,
                &mut m,
            ))
            .unwrap();
        let sk = f
            .suite
            .generate_keypair(SchemeId::ModelRsa1024, &mut f.rng, &mut m)
            .unwrap();
        let pc = f
            .pca
            .issue_pseudonyms(&ticket, &[ShortTermKeyRequest::new(&sk, &f.suite, &mut m)])
            .unwrap()
            .remove(0);
        (lk, ltc, Arc::new(pc), sk)
    }

    #[test]
    fn answers_with_every_match_and_signs() {
        let mut f = fixture(ResponseMode::Signed, AccessMode::Open);
        let req = request(1);
        let resp = f
            .server
            .answer(&req, &Credential::Anonymous, SimTime::from_secs(1), None)
            .unwrap();
        let want: Vec<u32> = f
            .server
            .database()
            .iter()
            .filter(|p| p.poi_type == PoiType(1) && p.location.distance(&req.location) <= 120.0)
            .map(|p| p.id)
            .collect();
        assert!(!want.is_empty());
        assert_eq!(resp.records.iter().map(|p| p.id).collect::<Vec<_>>(), want);
        let sig = resp.signature.as_ref().unwrap();
        let bytes = LbsResponse::signed_bytes(&resp.request, &resp.records);
        assert!(f
            .suite
            .verify(&bytes, sig, f.server.public_key(), &mut CostMeter::new())
            .is_accept());
        assert_eq!(
            LbsResponse::decode(&bytes),
            Some((resp.request.clone(), resp.records.clone()))
        );
    }

    #[test]
    fn five_matches_give_five_records() {
        let mut f = fixture(ResponseMode::Signed, AccessMode::Open);
        let mut pois: Vec<Poi> = (0..5)
            .map(|i| Poi {
                id: i,
                location: Point::new(100.0 + 10.0 * i as f64, 100.0),
                poi_type: PoiType(3),
                payload: b"cafe".as_slice().into(),
            })
            .collect();
        pois.push(Poi {
            id: 5,
            location: Point::new(900.0, 900.0),
            poi_type: PoiType(3),
            payload: b"far".as_slice().into(),
        });
        f.server.db = Arc::new(PoiDatabase::new(pois));
        let req = LbsRequest {
            location: Point::new(120.0, 100.0),
            poi_type: PoiType(3),
            radius_m: 500.0,
            issued_at: SimTime::ZERO,
        };
        let resp = f
            .server
            .answer(&req, &Credential::Anonymous, SimTime::ZERO, None)
            .unwrap();
        assert_eq!(resp.records.len(), 5);
    }

    #[test]
    fn identical_requests_get_identical_answers() {
        let mut f = fixture(ResponseMode::Signed, AccessMode::Open);
        let a = f
            .server
            .answer(
                &request(1),
                &Credential::Anonymous,
                SimTime::from_secs(1),
                None,
            )
            .unwrap();
        let b = f
            .server
            .answer(
                &request(1),
                &Credential::Anonymous,
                SimTime::from_secs(9),
                None,
            )
            .unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn absent_type_yields_empty_result() {
        let mut f = fixture(ResponseMode::Signed, AccessMode::Open);
        let mut req = request(1);
        req.poi_type = PoiType(77);
        let resp = f
            .server
            .answer(&req, &Credential::Anonymous, SimTime::from_secs(1), None)
            .unwrap();
        assert!(resp.records.is_empty());
    }

    #[test]
    fn channel_only_mode_carries_no_signature() {
        let mut f = fixture(ResponseMode::ChannelOnly, AccessMode::Open);
        let resp = f
            .server
            .answer(
                &request(1),
                &Credential::Anonymous,
                SimTime::from_secs(1),
                None,
            )
            .unwrap();
        assert!(resp.signature.is_none());
    }

    #[test]
    fn subscriber_mode_checks_credentials() {
        let mut f = fixture(ResponseMode::Signed, AccessMode::Subscriber);
        let (lk, ltc, pc, sk) = enroll(&mut f, "alice");
        let req = request(1);
        let now = SimTime::from_secs(1);
        assert_eq!(
            f.server
                .answer(&req, &Credential::Anonymous, now, None)
                .unwrap_err(),
            LbsError::CredentialRequired
        );
        let mut m = CostMeter::new();
        let good = Credential::LongTerm {
            ltc: ltc.clone(),
            signature: f.suite.sign(&req.signed_bytes(), &lk, &mut m),
        };
        assert!(f.server.answer(&req, &good, now, None).is_ok());
        let wrong_key = Credential::LongTerm {
            ltc,
            signature: f.suite.sign(&req.signed_bytes(), &sk, &mut m),
        };
        assert_eq!(
            f.server.answer(&req, &wrong_key, now, None).unwrap_err(),
            LbsError::BadSignature
        );
        let pseudo = Credential::Pseudonym {
            pc,
            signature: f.suite.sign(&req.signed_bytes(), &sk, &mut m),
        };
        assert!(f.server.answer(&req, &pseudo, now, None).is_ok());
        assert_eq!(f.server.log().len(), 2);
    }

    fn entry(cred: PresentedCredential, node: usize) -> LogEntry {
        LogEntry {
            at: SimTime::ZERO,
            credential: cred,
            location: Point::default(),
            poi_type: PoiType(1),
            truth: Some(NodeIndex(node)),
        }
    }

    #[test]
    fn long_term_credential_links_everything() {
        let entries: Vec<LogEntry> = (0..7)
            .map(|_| entry(PresentedCredential::LongTerm("n".into()), 0))
            .collect();
        let r = curiosity_report(&entries);
        assert_eq!(r.max_linkable[&NodeIndex(0)], 7);
        assert_eq!(r.group_sizes.len(), 1);
    }

    #[test]
    fn rotating_pseudonyms_leave_singletons() {
        let entries: Vec<LogEntry> = (0..6)
            .map(|i| {
                entry(
                    PresentedCredential::Pseudonym(PcSerial(i)),
                    (i % 2) as usize,
                )
            })
            .collect();
        let r = curiosity_report(&entries);
        assert!(r.max_linkable.values().all(|&n| n == 1));
        assert_eq!(r.max_linkable.len(), 2);
    }

    #[test]
    fn anonymous_requests_form_one_pool() {
        let entries: Vec<LogEntry> = (0..5)
            .map(|i| entry(PresentedCredential::Anonymous, i))
            .collect();
        let r = curiosity_report(&entries);
        assert_eq!(r.group_sizes[&PresentedCredential::Anonymous], 5);
        assert_eq!(r.group_sizes.len(), 1);
    }

    #[test]
    fn unreachable_server_refuses() {
        let mut f = fixture(ResponseMode::Signed, AccessMode::Open);
        f.server.reachable = false;
        assert_eq!(
            f.server
                .answer(
                    &request(1),
                    &Credential::Anonymous,
                    SimTime::from_secs(1),
                    None
                )
                .unwrap_err(),
            LbsError::Unreachable
        );
        assert!(f.server.log().is_empty());
    }
}
