//! P2P message payloads and their canonical byte encodings.
//!
//! A query payload is exactly 25 bytes:
//! `id u32 | issued_at u64 (µs) | x f32 | y f32 | type u16 | wanted u8 | radius u16 (m)`.
//! A response payload is `id u32 | issued_at u64 | records`, with records
//! in the POI record encoding. Signatures cover a one-byte kind tag
//! followed by the payload.

use std::fmt;
use std::sync::Arc;

use rand::Rng;

use crate::credentials::{PcSerial, PseudonymCertificate};
use crate::crypto::Signature;
use crate::lbs::{decode_pois, encode_pois, Poi};
use crate::types::{PoiType, Point, SimTime};

pub const QUERY_PAYLOAD_LEN: usize = 25;
const QUERY_TAG: u8 = b'Q';
const RESPONSE_TAG: u8 = b'R';

/// Link-layer address and network address, both regenerated at every
/// pseudonym change.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct LinkIdentity {
    pub address: u64,
    pub ip: u32,
}

impl LinkIdentity {
    pub fn random<R: Rng>(rng: &mut R) -> Self {
        LinkIdentity {
            address: rng.gen::<u64>() & 0xffff_ffff_ffff,
            ip: (10 << 24) | (rng.gen::<u32>() & 0x00ff_ffff),
        }
    }

    pub fn address_str(&self) -> String {
        format!("{:012x}", self.address)
    }

    pub fn ip_str(&self) -> String {
        let b = self.ip.to_be_bytes();
        format!("{}.{}.{}.{}", b[0], b[1], b[2], b[3])
    }
}

impl fmt::Display for LinkIdentity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.address_str(), self.ip_str())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct QueryPayload {
    pub query_id: u32,
    pub issued_at: SimTime,
    /// Stored at `f32` precision.
    pub location: Point,
    pub poi_type: PoiType,
    pub wanted: u8,
    pub radius_m: u16,
}

impl QueryPayload {
    pub fn encode(&self) -> [u8; QUERY_PAYLOAD_LEN] {
        let mut b = [0u8; QUERY_PAYLOAD_LEN];
        b[0..4].copy_from_slice(&self.query_id.to_be_bytes());
        b[4..12].copy_from_slice(&self.issued_at.as_micros().to_be_bytes());
        b[12..16].copy_from_slice(&(self.location.x as f32).to_be_bytes());
        b[16..20].copy_from_slice(&(self.location.y as f32).to_be_bytes());
        b[20..22].copy_from_slice(&self.poi_type.0.to_be_bytes());
        b[22] = self.wanted;
        b[23..25].copy_from_slice(&self.radius_m.to_be_bytes());
        b
    }

    pub fn decode(b: &[u8]) -> Option<Self> {
        if b.len() != QUERY_PAYLOAD_LEN {
            return None;
        }
        let f = |i: usize| f32::from_be_bytes(b[i..i + 4].try_into().unwrap()) as f64;
        Some(QueryPayload {
            query_id: u32::from_be_bytes(b[0..4].try_into().unwrap()),
            issued_at: SimTime(u64::from_be_bytes(b[4..12].try_into().unwrap())),
            location: Point::new(f(12), f(16)),
            poi_type: PoiType(u16::from_be_bytes(b[20..22].try_into().unwrap())),
            wanted: b[22],
            radius_m: u16::from_be_bytes(b[23..25].try_into().unwrap()),
        })
    }

    pub fn signed_bytes(&self) -> [u8; QUERY_PAYLOAD_LEN + 1] {
        let mut b = [0u8; QUERY_PAYLOAD_LEN + 1];
        b[0] = QUERY_TAG;
        b[1..].copy_from_slice(&self.encode());
        b
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ResponsePayload {
    pub query_id: u32,
    pub issued_at: SimTime,
    pub records: Vec<Poi>,
}

impl ResponsePayload {
    pub fn encode(&self) -> Vec<u8> {
        let mut b = Vec::with_capacity(16 + self.records.len() * 32);
        b.extend_from_slice(&self.query_id.to_be_bytes());
        b.extend_from_slice(&self.issued_at.as_micros().to_be_bytes());
        encode_pois(&self.records, &mut b);
        b
    }

    pub fn decode(b: &[u8]) -> Option<Self> {
        if b.len() < 12 {
            return None;
        }
        let (records, rest) = decode_pois(&b[12..])?;
        if !rest.is_empty() {
            return None;
        }
        Some(ResponsePayload {
            query_id: u32::from_be_bytes(b[0..4].try_into().unwrap()),
            issued_at: SimTime(u64::from_be_bytes(b[4..12].try_into().unwrap())),
            records,
        })
    }

    pub fn signed_bytes(&self) -> Vec<u8> {
        let mut b = vec![RESPONSE_TAG];
        b.extend_from_slice(&self.encode());
        b
    }

    /// Parses bytes produced by [`ResponsePayload::signed_bytes`].
    pub fn from_signed_bytes(b: &[u8]) -> Option<Self> {
        match b.split_first() {
            Some((&RESPONSE_TAG, rest)) => Self::decode(rest),
            _ => None,
        }
    }
}

/// Parses bytes produced by [`QueryPayload::signed_bytes`].
pub fn query_from_signed_bytes(b: &[u8]) -> Option<QueryPayload> {
    match b.split_first() {
        Some((&QUERY_TAG, rest)) => QueryPayload::decode(rest),
        _ => None,
    }
}

/// How a message names its signing pseudonym.
#[derive(Clone, Debug, PartialEq)]
pub enum PcRef {
    Attached(Arc<PseudonymCertificate>),
    /// Serial only; the receiver must already hold the certificate.
    Serial(PcSerial),
}

impl PcRef {
    pub fn serial(&self) -> PcSerial {
        match self {
            PcRef::Attached(pc) => pc.serial,
            PcRef::Serial(s) => *s,
        }
    }

    pub fn is_attached(&self) -> bool {
        matches!(self, PcRef::Attached(_))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PeerQuery {
    pub payload: QueryPayload,
    pub signature: Signature,
    pub pc: PcRef,
    pub link: LinkIdentity,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PeerResponse {
    pub payload: ResponsePayload,
    pub signature: Signature,
    pub pc: PcRef,
    pub link: LinkIdentity,
    /// Link address of the querier; everyone else in range overhears.
    pub dest: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Message {
    Query(PeerQuery),
    Response(PeerResponse),
}

impl Message {
    pub fn link(&self) -> LinkIdentity {
        match self {
            Message::Query(q) => q.link,
            Message::Response(r) => r.link,
        }
    }

    pub fn pc(&self) -> &PcRef {
        match self {
            Message::Query(q) => &q.pc,
            Message::Response(r) => &r.pc,
        }
    }

    pub fn query_id(&self) -> u32 {
        match self {
            Message::Query(q) => q.payload.query_id,
            Message::Response(r) => r.payload.query_id,
        }
    }

    pub fn issued_at(&self) -> SimTime {
        match self {
            Message::Query(q) => q.payload.issued_at,
            Message::Response(r) => r.payload.issued_at,
        }
    }
}
