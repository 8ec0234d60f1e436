use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{CryptoError, SchemeId};

/// Simulated cost of each operation of one signature scheme.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostProfile {
    pub keygen_ms: f64,
    pub sign_ms: f64,
    pub verify_ms: f64,
    pub signature_size_bytes: usize,
    /// Size of the DER SubjectPublicKeyInfo the scheme would put on the wire.
    pub public_key_size_bytes: usize,
}

impl CostProfile {
    pub const ZERO: CostProfile = CostProfile {
        keygen_ms: 0.0,
        sign_ms: 0.0,
        verify_ms: 0.0,
        signature_size_bytes: 64,
        public_key_size_bytes: 44,
    };

    pub fn validate(&self) -> Result<(), CryptoError> {
        let costs = [self.keygen_ms, self.sign_ms, self.verify_ms];
        if costs.iter().any(|c| !c.is_finite() || *c < 0.0) {
            return Err(CryptoError::InvalidProfile(format!("{self:?}")));
        }
        Ok(())
    }

    pub fn scaled(&self, factor: f64) -> CostProfile {
        CostProfile {
            keygen_ms: self.keygen_ms * factor,
            sign_ms: self.sign_ms * factor,
            verify_ms: self.verify_ms * factor,
            ..*self
        }
    }
}

/// Costs measured on the reference handset.
pub fn default_profile(scheme: SchemeId) -> CostProfile {
    match scheme {
        SchemeId::ModelRsa1024 => CostProfile {
            keygen_ms: 400.86,
            sign_ms: 4.63,
            verify_ms: 0.78,
            signature_size_bytes: 128,
            public_key_size_bytes: 162,
        },
        SchemeId::ModelRsa2048 => CostProfile {
            keygen_ms: 2104.59,
            sign_ms: 21.18,
            verify_ms: 1.21,
            signature_size_bytes: 256,
            public_key_size_bytes: 294,
        },
        SchemeId::ModelEcdsa192 => CostProfile {
            keygen_ms: 214.65,
            sign_ms: 210.01,
            verify_ms: 286.44,
            signature_size_bytes: 56,
            public_key_size_bytes: 75,
        },
        SchemeId::ModelEcdsa224 => CostProfile {
            keygen_ms: 251.66,
            sign_ms: 251.91,
            verify_ms: 345.95,
            signature_size_bytes: 63,
            public_key_size_bytes: 80,
        },
        SchemeId::Ed25519 => CostProfile::ZERO,
    }
}

/// Cost table keyed by scheme.
#[derive(Clone, Debug, PartialEq)]
pub struct CostProfiles {
    table: BTreeMap<SchemeId, CostProfile>,
}

impl Default for CostProfiles {
    fn default() -> Self {
        CostProfiles {
            table: SchemeId::ALL
                .iter()
                .map(|s| (*s, default_profile(*s)))
                .collect(),
        }
    }
}

impl CostProfiles {
    /// Defaults with every cost multiplied by `factor` (hardware scaling knob).
    pub fn scaled(factor: f64) -> Self {
        let mut p = Self::default();
        for v in p.table.values_mut() {
            *v = v.scaled(factor);
        }
        p
    }

    /// All-zero costs, for runs that only care about protocol behavior.
    pub fn zero() -> Self {
        let mut p = Self::default();
        for v in p.table.values_mut() {
            *v = CostProfile {
                keygen_ms: 0.0,
                sign_ms: 0.0,
                verify_ms: 0.0,
                ..*v
            };
        }
        p
    }

    pub fn get(&self, scheme: SchemeId) -> Option<&CostProfile> {
        self.table.get(&scheme)
    }

    pub fn set(&mut self, scheme: SchemeId, profile: CostProfile) -> Result<(), CryptoError> {
        profile.validate()?;
        self.table.insert(scheme, profile);
        Ok(())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&SchemeId, &CostProfile)> {
        self.table.iter()
    }
}

/// Renders the profile table as fixed-width text.
pub fn render_table(profiles: &CostProfiles) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "{:<16} {:>12} {:>10} {:>10} {:>10}\n",
        "scheme", "keygen_ms", "sign_ms", "verify_ms", "sig_bytes"
    ));
    for (scheme, p) in profiles.iter() {
        out.push_str(&format!(
            "{:<16} {:>12.2} {:>10.2} {:>10.2} {:>10}\n",
            scheme.name(),
            p.keygen_ms,
            p.sign_ms,
            p.verify_ms,
            p.signature_size_bytes
        ));
    }
    out
}
