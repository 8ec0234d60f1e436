//! JSON envelope for a peer query on the air: base64 payload, signature and
//! attached pseudonym certificate, in a fixed field order.

use std::sync::Arc;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::credentials::{PcSerial, PseudonymCertificate};
use crate::crypto::{PublicKey, SchemeId, Signature};
use crate::node::{LinkIdentity, PcRef, PeerQuery, QueryPayload};
use crate::types::{PoiType, Point, SimTime, Window};

#[derive(Debug, Error)]
pub enum WireError {
    #[error("malformed envelope: {0}")]
    Json(#[from] serde_json::Error),
    #[error("bad base64 in `{0}`")]
    Base64(&'static str),
    #[error("bad field `{0}`")]
    Field(&'static str),
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct QueryEnvelope {
    #[serde(rename = "type")]
    kind: String,
    src: String,
    query: String,
    alg: SchemeId,
    sig: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pc_sn: Option<String>,
    #[serde(rename = "pc", skip_serializing_if = "Option::is_none")]
    cert: Option<CertEnvelope>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CertEnvelope {
    sn: String,
    alg: SchemeId,
    #[serde(rename = "key")]
    pk: String,
    from: u64,
    to: u64,
    #[serde(rename = "ca")]
    ca_alg: SchemeId,
    ca_sig: String,
}

/// Serializes a peer query. An attached PC is embedded in full; a bare
/// reference carries only its serial. The IP address belongs to the network
/// header and is not part of the envelope.
pub fn encode_query(q: &PeerQuery) -> String {
    let (pc_sn, cert) = match &q.pc {
        PcRef::Attached(pc) => (
            None,
            Some(CertEnvelope {
                sn: pc.serial.to_string(),
                alg: pc.public.scheme(),
                pk: B64.encode(pc.public.as_bytes()),
                from: pc.window.from.as_micros(),
                to: pc.window.to.as_micros(),
                ca_alg: pc.issuer_signature.scheme(),
                ca_sig: B64.encode(pc.issuer_signature.as_bytes()),
            }),
        ),
        PcRef::Serial(s) => (Some(s.to_string()), None),
    };
    let env = QueryEnvelope {
        kind: "query".into(),
        src: q.link.address_str(),
        query: B64.encode(q.payload.encode()),
        alg: q.signature.scheme(),
        sig: B64.encode(q.signature.as_bytes()),
        pc_sn,
        cert,
    };
    serde_json::to_string(&env).expect("envelope serializes")
}

fn unb64(field: &'static str, s: &str) -> Result<Vec<u8>, WireError> {
    B64.decode(s).map_err(|_| WireError::Base64(field))
}

pub fn decode_query(text: &str) -> Result<PeerQuery, WireError> {
    let env: QueryEnvelope = serde_json::from_str(text)?;
    if env.kind != "query" {
        return Err(WireError::Field("type"));
    }
    let address = u64::from_str_radix(&env.src, 16).map_err(|_| WireError::Field("src"))?;
    let payload =
        QueryPayload::decode(&unb64("query", &env.query)?).ok_or(WireError::Field("query"))?;
    let signature = Signature::from_bytes(env.alg, unb64("sig", &env.sig)?);
    let pc = match (env.pc_sn, env.cert) {
        (Some(sn), None) => PcRef::Serial(
            sn.parse::<PcSerial>()
                .map_err(|_| WireError::Field("pc_sn"))?,
        ),
        (None, Some(c)) => {
            let public = PublicKey::from_bytes(c.alg, unb64("cert.pk", &c.pk)?)
                .map_err(|_| WireError::Field("cert.pk"))?;
            PcRef::Attached(Arc::new(PseudonymCertificate {
                serial: c.sn.parse().map_err(|_| WireError::Field("cert.sn"))?,
                public,
                window: Window::new(SimTime(c.from), SimTime(c.to)),
                issuer_signature: Signature::from_bytes(c.ca_alg, unb64("cert.ca_sig", &c.ca_sig)?),
            }))
        }
        _ => return Err(WireError::Field("cert")),
    };
    Ok(PeerQuery {
        payload,
        signature,
        pc,
        link: LinkIdentity { address, ip: 0 },
    })
}

/// A fixed model-RSA-1024 query with its PC attached, used as the size
/// reference for the wire format.
pub fn reference_query() -> PeerQuery {
    let bytes = |n: usize, seed: u8| {
        (0..n)
            .map(|i| (i as u8).wrapping_mul(31).wrapping_add(seed))
            .collect::<Vec<u8>>()
    };
    let pc = PseudonymCertificate {
        serial: PcSerial(0x0123_4567_89ab_cdef),
        public: PublicKey::from_bytes(SchemeId::ModelRsa1024, bytes(162, 1)).unwrap(),
        window: Window::new(SimTime::from_secs(600), SimTime::from_secs(1200)),
        issuer_signature: Signature::from_bytes(SchemeId::ModelRsa2048, bytes(256, 2)),
    };
    PeerQuery {
        payload: QueryPayload {
            query_id: 42,
            issued_at: SimTime::from_secs(754),
            location: Point::new(412.5, 230.25),
            poi_type: PoiType(3),
            wanted: 3,
            radius_m: 500,
        },
        signature: Signature::from_bytes(SchemeId::ModelRsa1024, bytes(128, 3)),
        pc: PcRef::Attached(Arc::new(pc)),
        link: LinkIdentity {
            address: 0x02_5e_1a_7c_00_3b,
            ip: u32::from(std::net::Ipv4Addr::new(10, 0, 17, 4)),
        },
    }
}
