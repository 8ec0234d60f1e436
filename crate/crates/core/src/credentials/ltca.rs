use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{
    CertificateRequest, CredentialError, CredentialPolicy, LongTermCertificate, LtcSerial,
    LtcaLedger, Ticket, TicketEntry, TicketRequest, TicketSerial,
};
use crate::crypto::{CostMeter, CryptoError, CryptoSuite, KeyPair, PublicKey, SchemeId};
use crate::types::{SimTime, Window};

/// Long-term certification authority.
pub struct Ltca {
    key: KeyPair,
    suite: CryptoSuite,
    policy: CredentialPolicy,
    rng: ChaCha8Rng,
    ledger: LtcaLedger,
    pub meter: CostMeter,
}

impl Ltca {
    pub fn new(
        suite: CryptoSuite,
        scheme: SchemeId,
        policy: CredentialPolicy,
        seed: u64,
    ) -> Result<Self, CryptoError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut meter = CostMeter::new();
        let key = suite.generate_keypair(scheme, &mut rng, &mut meter)?;
        Ok(Ltca {
            key,
            suite,
            policy,
            rng,
            ledger: LtcaLedger::default(),
            meter,
        })
    }

    pub fn public_key(&self) -> &PublicKey {
        self.key.public()
    }

    pub fn policy(&self) -> &CredentialPolicy {
        &self.policy
    }

    pub fn ledger(&self) -> &LtcaLedger {
        &self.ledger
    }

    pub fn register(
        &mut self,
        csr: &CertificateRequest,
    ) -> Result<LongTermCertificate, CredentialError> {
        if self.ledger.certificates.contains_key(&csr.node_id) {
            return Err(CredentialError::DuplicateRegistration(csr.node_id.clone()));
        }
        let tbs = CertificateRequest::signed_bytes(&csr.node_id, &csr.public);
        if !self
            .suite
            .verify(&tbs, &csr.signature, &csr.public, &mut self.meter)
            .is_accept()
        {
            return Err(CredentialError::ProofOfPossession);
        }
        let serial = loop {
            let s = LtcSerial(self.rng.next_u64());
            if !self.ledger.certificates.values().any(|v| *v == s) {
                break s;
            }
        };
        let tbs = LongTermCertificate::signed_bytes(serial, &csr.node_id, &csr.public);
        let issuer_signature = self.suite.sign(&tbs, &self.key, &mut self.meter);
        self.ledger.certificates.insert(csr.node_id.clone(), serial);
        Ok(LongTermCertificate {
            serial,
            node_id: csr.node_id.clone(),
            public: csr.public.clone(),
            issuer_signature,
        })
    }

    /// Issues a ticket of the policy length starting at the first grid
    /// instant at or after the desired start, unless one of the node's
    /// earlier tickets overlaps that window.
    pub fn request_ticket(&mut self, req: &TicketRequest) -> Result<Ticket, CredentialError> {
        let ltc = &req.ltc;
        let registered = self.ledger.certificates.get(&ltc.node_id) == Some(&ltc.serial);
        if !registered
            || !ltc
                .verify(self.key.public(), &self.suite, &mut self.meter)
                .is_accept()
        {
            return Err(CredentialError::BadCertificate);
        }
        let tbs = TicketRequest::signed_bytes(ltc.serial, req.desired_start);
        if !self
            .suite
            .verify(&tbs, &req.signature, &ltc.public, &mut self.meter)
            .is_accept()
        {
            return Err(CredentialError::BadRequestSignature);
        }
        if self.ledger.is_revoked(&ltc.node_id) {
            return Err(CredentialError::Revoked(ltc.node_id.clone()));
        }
        let window = self.ticket_window(req.desired_start);
        if let Some(conflict) = self
            .ledger
            .tickets_of(&ltc.node_id)
            .iter()
            .find(|e| e.window.overlaps(&window))
        {
            return Err(CredentialError::OverlappingTicket {
                conflicting: conflict.serial,
            });
        }
        let serial = loop {
            let s = TicketSerial(self.rng.next_u64());
            if self.ledger.owner_of(s).is_none() {
                break s;
            }
        };
        let issuer_signature = self.suite.sign(
            &Ticket::signed_bytes(serial, window),
            &self.key,
            &mut self.meter,
        );
        self.ledger
            .record_ticket(&ltc.node_id, TicketEntry { serial, window });
        Ok(Ticket {
            serial,
            window,
            issuer_signature,
        })
    }

    pub fn ticket_window(&self, desired_start: SimTime) -> Window {
        let from = self.policy.snap_to_grid(desired_start);
        Window::new(from, from + self.policy.ticket_duration)
    }

    /// Answers the RA: which node holds this ticket.
    pub fn identify(&self, ticket: TicketSerial) -> Result<String, CredentialError> {
        self.ledger
            .owner_of(ticket)
            .map(str::to_string)
            .ok_or(CredentialError::UnknownTicket(ticket))
    }

    /// Denies all future tickets to the node.
    pub fn revoke(&mut self, node_id: &str) -> bool {
        self.ledger.revoked.insert(node_id.to_string())
    }
}
