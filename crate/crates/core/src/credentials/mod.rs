//! Identity and credential management: the long-term CA (registration and
//! tickets), the pseudonym CA, and the resolution authority.
//!
//! The LTCA knows which node holds which ticket; the PCA knows which ticket
//! paid for which pseudonym. Neither ledger type has a field for the other
//! half of the mapping, so linking a pseudonym to a node needs both.

mod ledger;
mod ltca;
mod pca;
mod ra;
mod view;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crypto::{CostMeter, CryptoSuite, KeyPair, PublicKey, Signature, Verdict};
use crate::types::{SimTime, Window};

pub use ledger::{LedgerParseError, LtcaLedger, PcaLedger, TicketEntry};
pub use ltca::Ltca;
pub use pca::Pca;
pub use ra::{
    AcceptAll, Claim, EvidenceItem, EvidenceJudge, Judgement, MisbehaviorReport, Ra, Resolution,
};
pub use view::{AuthorityView, Knowledge, Lookup};

macro_rules! serial_type {
    ($name:ident, $prefix:literal) => {
        #[derive(
            Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
        )]
        pub struct $name(pub u64);

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, concat!($prefix, "{:016x}"), self.0)
            }
        }

        impl std::str::FromStr for $name {
            type Err = LedgerParseError;
            fn from_str(s: &str) -> Result<Self, Self::Err> {
                s.strip_prefix($prefix)
                    .and_then(|hex| u64::from_str_radix(hex, 16).ok())
                    .map($name)
                    .ok_or_else(|| LedgerParseError::BadField(s.to_string()))
            }
        }
    };
}

serial_type!(LtcSerial, "L-");
serial_type!(TicketSerial, "T-");
serial_type!(PcSerial, "P-");

/// Issuance policy shared by the LTCA and PCA.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CredentialPolicy {
    /// Ticket validity length.
    pub ticket_duration: SimTime,
    /// All ticket and pseudonym boundaries are multiples of this step.
    pub issuance_grid: SimTime,
    /// Pseudonym lifetime; `ticket_duration / pseudonym_lifetime` keys make a full batch.
    pub pseudonym_lifetime: SimTime,
}

impl Default for CredentialPolicy {
    fn default() -> Self {
        CredentialPolicy {
            ticket_duration: SimTime::from_secs(600),
            issuance_grid: SimTime::from_secs(60),
            pseudonym_lifetime: SimTime::from_secs(600),
        }
    }
}

impl CredentialPolicy {
    pub fn validate(&self) -> Result<(), CredentialError> {
        let d = self.ticket_duration.as_micros();
        let g = self.issuance_grid.as_micros();
        let tau = self.pseudonym_lifetime.as_micros();
        let bad = |msg: &str| Err(CredentialError::Policy(msg.to_string()));
        if g == 0 || d == 0 || tau == 0 {
            return bad("durations must be positive");
        }
        if !d.is_multiple_of(g) {
            return bad("ticket_duration must be a multiple of issuance_grid");
        }
        if !tau.is_multiple_of(g) || !d.is_multiple_of(tau) {
            return bad("pseudonym_lifetime must be a grid multiple dividing ticket_duration");
        }
        Ok(())
    }

    /// Number of pseudonyms that exactly tile one ticket.
    pub fn batch_size(&self) -> usize {
        (self.ticket_duration.as_micros() / self.pseudonym_lifetime.as_micros()).max(1) as usize
    }

    /// Smallest grid multiple at or after `t`.
    pub fn snap_to_grid(&self, t: SimTime) -> SimTime {
        let g = self.issuance_grid.as_micros();
        SimTime(t.as_micros().div_ceil(g) * g)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CredentialError {
    #[error("node `{0}` is already registered")]
    DuplicateRegistration(String),
    #[error("proof of possession failed")]
    ProofOfPossession,
    #[error("certificate not issued by this authority")]
    BadCertificate,
    #[error("request signature does not verify")]
    BadRequestSignature,
    #[error("requested ticket overlaps outstanding ticket {conflicting}")]
    OverlappingTicket { conflicting: TicketSerial },
    #[error("node `{0}` is revoked")]
    Revoked(String),
    #[error("ticket signature does not verify")]
    BadTicket,
    #[error("ticket {0} was already exchanged for pseudonyms")]
    TicketReplay(TicketSerial),
    #[error("short-term key {index} failed proof of possession")]
    ShortTermKey { index: usize },
    #[error("cannot split ticket window into {0} grid-aligned pseudonym windows")]
    BatchNotAligned(usize),
    #[error("empty pseudonym request")]
    EmptyBatch,
    #[error("policy: {0}")]
    Policy(String),
    #[error("report rejected: {0}")]
    ReportRejected(String),
    #[error("unknown pseudonym serial {0}")]
    UnknownPseudonym(PcSerial),
    #[error("unknown ticket serial {0}")]
    UnknownTicket(TicketSerial),
}

fn put_str(buf: &mut Vec<u8>, s: &str) {
    buf.extend_from_slice(&(s.len() as u32).to_be_bytes());
    buf.extend_from_slice(s.as_bytes());
}

fn put_key(buf: &mut Vec<u8>, k: &PublicKey) {
    buf.push(k.scheme().tag());
    buf.extend_from_slice(&(k.as_bytes().len() as u32).to_be_bytes());
    buf.extend_from_slice(k.as_bytes());
}

/// Self-signed certificate signing request.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CertificateRequest {
    pub node_id: String,
    pub public: PublicKey,
    pub signature: Signature,
}

impl CertificateRequest {
    pub fn signed_bytes(node_id: &str, public: &PublicKey) -> Vec<u8> {
        let mut buf = b"csr/v1".to_vec();
        put_str(&mut buf, node_id);
        put_key(&mut buf, public);
        buf
    }

    pub fn new(node_id: &str, key: &KeyPair, suite: &CryptoSuite, meter: &mut CostMeter) -> Self {
        let signature = suite.sign(&Self::signed_bytes(node_id, key.public()), key, meter);
        CertificateRequest {
            node_id: node_id.to_string(),
            public: key.public().clone(),
            signature,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LongTermCertificate {
    pub serial: LtcSerial,
    pub node_id: String,
    pub public: PublicKey,
    pub issuer_signature: Signature,
}

impl LongTermCertificate {
    pub fn signed_bytes(serial: LtcSerial, node_id: &str, public: &PublicKey) -> Vec<u8> {
        let mut buf = b"ltc/v1".to_vec();
        buf.extend_from_slice(&serial.0.to_be_bytes());
        put_str(&mut buf, node_id);
        put_key(&mut buf, public);
        buf
    }

    pub fn verify(&self, ltca: &PublicKey, suite: &CryptoSuite, meter: &mut CostMeter) -> Verdict {
        let tbs = Self::signed_bytes(self.serial, &self.node_id, &self.public);
        suite.verify(&tbs, &self.issuer_signature, ltca, meter)
    }
}

/// Ticket request signed under the node's long-term key.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TicketRequest {
    pub ltc: LongTermCertificate,
    pub desired_start: SimTime,
    pub signature: Signature,
}

impl TicketRequest {
    pub fn signed_bytes(ltc: LtcSerial, desired_start: SimTime) -> Vec<u8> {
        let mut buf = b"ticket-req/v1".to_vec();
        buf.extend_from_slice(&ltc.0.to_be_bytes());
        buf.extend_from_slice(&desired_start.as_micros().to_be_bytes());
        buf
    }

    pub fn new(
        ltc: &LongTermCertificate,
        desired_start: SimTime,
        key: &KeyPair,
        suite: &CryptoSuite,
        meter: &mut CostMeter,
    ) -> Self {
        let signature = suite.sign(&Self::signed_bytes(ltc.serial, desired_start), key, meter);
        TicketRequest {
            ltc: ltc.clone(),
            desired_start,
            signature,
        }
    }
}

/// Anonymized authorization: a serial and a window, nothing about the holder.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Ticket {
    pub serial: TicketSerial,
    pub window: Window,
    pub issuer_signature: Signature,
}

impl Ticket {
    pub fn signed_bytes(serial: TicketSerial, window: Window) -> Vec<u8> {
        let mut buf = b"ticket/v1".to_vec();
        buf.extend_from_slice(&serial.0.to_be_bytes());
        buf.extend_from_slice(&window.from.as_micros().to_be_bytes());
        buf.extend_from_slice(&window.to.as_micros().to_be_bytes());
        buf
    }
}

/// Short-term public key with a self-signature proving possession.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ShortTermKeyRequest {
    pub public: PublicKey,
    pub signature: Signature,
}

impl ShortTermKeyRequest {
    pub fn signed_bytes(public: &PublicKey) -> Vec<u8> {
        let mut buf = b"sk-pop/v1".to_vec();
        put_key(&mut buf, public);
        buf
    }

    pub fn new(key: &KeyPair, suite: &CryptoSuite, meter: &mut CostMeter) -> Self {
        let signature = suite.sign(&Self::signed_bytes(key.public()), key, meter);
        ShortTermKeyRequest {
            public: key.public().clone(),
            signature,
        }
    }
}

/// Pseudonym: a short-term key and a window, signed by the PCA.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct PseudonymCertificate {
    pub serial: PcSerial,
    pub public: PublicKey,
    pub window: Window,
    pub issuer_signature: Signature,
}

impl PseudonymCertificate {
    pub fn signed_bytes(serial: PcSerial, public: &PublicKey, window: Window) -> Vec<u8> {
        let mut buf = b"pc/v1".to_vec();
        buf.extend_from_slice(&serial.0.to_be_bytes());
        put_key(&mut buf, public);
        buf.extend_from_slice(&window.from.as_micros().to_be_bytes());
        buf.extend_from_slice(&window.to.as_micros().to_be_bytes());
        buf
    }

    pub fn tbs(&self) -> Vec<u8> {
        Self::signed_bytes(self.serial, &self.public, self.window)
    }

    pub fn verify(&self, pca: &PublicKey, suite: &CryptoSuite, meter: &mut CostMeter) -> Verdict {
        suite.verify(&self.tbs(), &self.issuer_signature, pca, meter)
    }
}
