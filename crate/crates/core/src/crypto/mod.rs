//! Signature schemes.
//!
//! Two families live behind one interface:
//!
//! - **Model schemes** (`model-RSA-1024`, `model-RSA-2048`, `model-ECDSA-192`,
//!   `model-ECDSA-224`). A signature is a keyed digest over the message and
//!   the signer's key id, stretched to the size the modeled scheme would
//!   produce. Verification is exact and costs a couple of SHA-256
//!   compressions, while each operation charges the handset cost from the
//!   scheme's [`CostProfile`] to a [`CostMeter`]. These schemes are a
//!   simulation device: anyone holding the public part can produce a valid
//!   tag, so they say nothing about unforgeability.
//! - **Ed25519** (`real-ed25519`), a real scheme used to check protocol
//!   correctness against actual signatures.
//!
//! The default node scheme is `model-RSA-1024` because it was the fastest
//! to sign and verify on the measured handset. That is a calibration choice
//! for the simulator, not a security recommendation.

mod meter;
mod profile;

use std::fmt;
use std::str::FromStr;

use ed25519_dalek::{Signer as _, Verifier as _};
use rand::{CryptoRng, RngCore};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use meter::CostMeter;
pub use profile::{default_profile, render_table, CostProfile, CostProfiles};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CryptoError {
    #[error("unknown signature scheme `{0}`")]
    UnknownScheme(String),
    #[error("no cost profile loaded for scheme {0}")]
    MissingProfile(SchemeId),
    #[error("invalid cost profile: {0}")]
    InvalidProfile(String),
    #[error("malformed {scheme} public key ({len} bytes)")]
    MalformedKey { scheme: SchemeId, len: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum SchemeId {
    ModelRsa1024,
    ModelRsa2048,
    ModelEcdsa192,
    ModelEcdsa224,
    Ed25519,
}

impl SchemeId {
    pub const ALL: [SchemeId; 5] = [
        SchemeId::ModelRsa1024,
        SchemeId::ModelRsa2048,
        SchemeId::ModelEcdsa192,
        SchemeId::ModelEcdsa224,
        SchemeId::Ed25519,
    ];

    pub const MODELED: [SchemeId; 4] = [
        SchemeId::ModelRsa1024,
        SchemeId::ModelRsa2048,
        SchemeId::ModelEcdsa192,
        SchemeId::ModelEcdsa224,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SchemeId::ModelRsa1024 => "model-RSA-1024",
            SchemeId::ModelRsa2048 => "model-RSA-2048",
            SchemeId::ModelEcdsa192 => "model-ECDSA-192",
            SchemeId::ModelEcdsa224 => "model-ECDSA-224",
            SchemeId::Ed25519 => "real-ed25519",
        }
    }

    pub fn tag(self) -> u8 {
        match self {
            SchemeId::ModelRsa1024 => 1,
            SchemeId::ModelRsa2048 => 2,
            SchemeId::ModelEcdsa192 => 3,
            SchemeId::ModelEcdsa224 => 4,
            SchemeId::Ed25519 => 5,
        }
    }

    pub fn is_model(self) -> bool {
        self != SchemeId::Ed25519
    }
}

impl fmt::Display for SchemeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SchemeId {
    type Err = CryptoError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        SchemeId::ALL
            .iter()
            .copied()
            .find(|id| id.name() == s)
            .or_else(|| (s == "real-default").then_some(SchemeId::Ed25519))
            .ok_or_else(|| CryptoError::UnknownScheme(s.to_string()))
    }
}

impl Serialize for SchemeId {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for SchemeId {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Verdict {
    Accept,
    Reject,
}

impl Verdict {
    pub fn is_accept(self) -> bool {
        self == Verdict::Accept
    }
}

/// Verification half of a key pair.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct PublicKey {
    scheme: SchemeId,
    bytes: Vec<u8>,
}

impl fmt::Debug for PublicKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "PublicKey({}, {:02x?}..)",
            self.scheme,
            &self.bytes[..4.min(self.bytes.len())]
        )
    }
}

impl PublicKey {
    /// Rebuilds a public key from its encoded bytes.
    pub fn from_bytes(scheme: SchemeId, bytes: Vec<u8>) -> Result<Self, CryptoError> {
        let ok = match scheme {
            SchemeId::Ed25519 => bytes.len() == 32,
            _ => bytes.len() >= 32,
        };
        if !ok {
            return Err(CryptoError::MalformedKey {
                scheme,
                len: bytes.len(),
            });
        }
        Ok(PublicKey { scheme, bytes })
    }

    pub fn scheme(&self) -> SchemeId {
        self.scheme
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.bytes
    }

    /// 32-byte identifier; for model keys this is the keying material.
    pub fn key_id(&self) -> &[u8] {
        &self.bytes[..32]
    }
}

enum PrivatePart {
    Model([u8; 32]),
    Ed25519(ed25519_dalek::SigningKey),
}

impl Clone for PrivatePart {
    fn clone(&self) -> Self {
        match self {
            PrivatePart::Model(s) => PrivatePart::Model(*s),
            PrivatePart::Ed25519(k) => PrivatePart::Ed25519(k.clone()),
        }
    }
}

#[derive(Clone)]
pub struct KeyPair {
    private: PrivatePart,
    public: PublicKey,
}

impl fmt::Debug for KeyPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("KeyPair")
            .field("public", &self.public)
            .finish_non_exhaustive()
    }
}

impl KeyPair {
    pub fn public(&self) -> &PublicKey {
        &self.public
    }

    pub fn scheme(&self) -> SchemeId {
        self.public.scheme
    }
}

#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Signature {
    scheme: SchemeId,
    bytes: Vec<u8>,
}

impl fmt::Debug for Signature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Signature({}, {} bytes)", self.scheme, self.bytes.len())
    }
}

impl Signature {
    pub fn from_bytes(scheme: SchemeId, bytes: Vec<u8>) -> Self {
        Signature { scheme, bytes }
    }

    pub fn scheme(&self) -> SchemeId {
        self.scheme
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.bytes
    }

    /// Mutable access to the raw bytes, for tamper tests and adversaries.
    pub fn bytes_mut(&mut self) -> &mut Vec<u8> {
        &mut self.bytes
    }
}

const MODEL_PUB_DOMAIN: &[u8] = b"p2plbs/model-pub/v1";
const MODEL_SIG_DOMAIN: &[u8] = b"p2plbs/model-sig/v1";

/// Stretches a 32-byte seed to `len` bytes. Block `b` is the seed with every
/// byte xored by `b`, so each output byte depends on exactly one seed byte.
fn stretch(seed: &[u8; 32], len: usize) -> Vec<u8> {
    let len = len.max(32);
    (0..len).map(|i| seed[i % 32] ^ (i / 32) as u8).collect()
}

fn model_tag(scheme: SchemeId, key_id: &[u8], message: &[u8]) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(MODEL_SIG_DOMAIN);
    h.update([scheme.tag()]);
    h.update(key_id);
    h.update(message);
    h.finalize().into()
}

/// Signature operations bound to a cost table.
#[derive(Clone, Debug, Default)]
pub struct CryptoSuite {
    profiles: CostProfiles,
}

impl CryptoSuite {
    pub fn new(profiles: CostProfiles) -> Self {
        CryptoSuite { profiles }
    }

    pub fn profiles(&self) -> &CostProfiles {
        &self.profiles
    }

    pub fn profile(&self, scheme: SchemeId) -> Result<&CostProfile, CryptoError> {
        self.profiles
            .get(scheme)
            .ok_or(CryptoError::MissingProfile(scheme))
    }

    pub fn generate_keypair<R: RngCore + CryptoRng>(
        &self,
        scheme: SchemeId,
        rng: &mut R,
        meter: &mut CostMeter,
    ) -> Result<KeyPair, CryptoError> {
        let profile = *self.profile(scheme)?;
        meter.charge_keygen(&profile);
        let kp = match scheme {
            SchemeId::Ed25519 => {
                let sk = ed25519_dalek::SigningKey::generate(rng);
                let public = PublicKey {
                    scheme,
                    bytes: sk.verifying_key().to_bytes().to_vec(),
                };
                KeyPair {
                    private: PrivatePart::Ed25519(sk),
                    public,
                }
            }
            _ => {
                let mut secret = [0u8; 32];
                rng.fill_bytes(&mut secret);
                let mut h = Sha256::new();
                h.update(MODEL_PUB_DOMAIN);
                h.update(secret);
                let key_id: [u8; 32] = h.finalize().into();
                KeyPair {
                    private: PrivatePart::Model(secret),
                    public: PublicKey {
                        scheme,
                        bytes: stretch(&key_id, profile.public_key_size_bytes),
                    },
                }
            }
        };
        Ok(kp)
    }

    pub fn sign(&self, message: &[u8], key: &KeyPair, meter: &mut CostMeter) -> Signature {
        let scheme = key.scheme();
        let size = match self.profiles.get(scheme) {
            Some(p) => {
                meter.charge_sign(p);
                p.signature_size_bytes
            }
            None => 32,
        };
        let bytes = match &key.private {
            PrivatePart::Ed25519(sk) => sk.sign(message).to_bytes().to_vec(),
            PrivatePart::Model(_) => {
                stretch(&model_tag(scheme, key.public.key_id(), message), size)
            }
        };
        Signature { scheme, bytes }
    }

    pub fn verify(
        &self,
        message: &[u8],
        signature: &Signature,
        public: &PublicKey,
        meter: &mut CostMeter,
    ) -> Verdict {
        let scheme = public.scheme;
        let Some(profile) = self.profiles.get(scheme) else {
            return Verdict::Reject;
        };
        meter.charge_verify(profile);
        if signature.scheme != scheme {
            return Verdict::Reject;
        }
        let ok = match scheme {
            SchemeId::Ed25519 => {
                let Ok(key_bytes) = <[u8; 32]>::try_from(public.bytes.as_slice()) else {
                    return Verdict::Reject;
                };
                let Ok(vk) = ed25519_dalek::VerifyingKey::from_bytes(&key_bytes) else {
                    return Verdict::Reject;
                };
                let Ok(sig) = ed25519_dalek::Signature::from_slice(&signature.bytes) else {
                    return Verdict::Reject;
                };
                vk.verify(message, &sig).is_ok()
            }
            _ => {
                let expected = stretch(
                    &model_tag(scheme, public.key_id(), message),
                    profile.signature_size_bytes,
                );
                expected == signature.bytes
            }
        };
        if ok {
            Verdict::Accept
        } else {
            Verdict::Reject
        }
    }
}
