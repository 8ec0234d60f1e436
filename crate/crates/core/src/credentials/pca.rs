use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{
    CredentialError, CredentialPolicy, PcSerial, PcaLedger, PseudonymCertificate,
    ShortTermKeyRequest, Ticket, TicketSerial,
};
use crate::crypto::{CostMeter, CryptoError, CryptoSuite, KeyPair, PublicKey, SchemeId};
use crate::types::{SimTime, Window};

/// Pseudonym certification authority. Accepts LTCA tickets, never identities.
pub struct Pca {
    key: KeyPair,
    ltca_key: PublicKey,
    suite: CryptoSuite,
    policy: CredentialPolicy,
    rng: ChaCha8Rng,
    ledger: PcaLedger,
    pub meter: CostMeter,
}

impl Pca {
    pub fn new(
        suite: CryptoSuite,
        scheme: SchemeId,
        ltca_key: PublicKey,
        policy: CredentialPolicy,
        seed: u64,
    ) -> Result<Self, CryptoError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut meter = CostMeter::new();
        let key = suite.generate_keypair(scheme, &mut rng, &mut meter)?;
        Ok(Pca {
            key,
            ltca_key,
            suite,
            policy,
            rng,
            ledger: PcaLedger::default(),
            meter,
        })
    }

    pub fn public_key(&self) -> &PublicKey {
        self.key.public()
    }

    pub fn ledger(&self) -> &PcaLedger {
        &self.ledger
    }

    /// Exchanges a fresh ticket for one pseudonym per submitted key. With
    /// more than one key the ticket window is cut into equal consecutive
    /// slices, one per key, so no two pseudonyms of a batch overlap.
    pub fn issue_pseudonyms(
        &mut self,
        ticket: &Ticket,
        keys: &[ShortTermKeyRequest],
    ) -> Result<Vec<PseudonymCertificate>, CredentialError> {
        let tbs = Ticket::signed_bytes(ticket.serial, ticket.window);
        if !self
            .suite
            .verify(
                &tbs,
                &ticket.issuer_signature,
                &self.ltca_key,
                &mut self.meter,
            )
            .is_accept()
        {
            return Err(CredentialError::BadTicket);
        }
        if self.ledger.is_consumed(ticket.serial) {
            return Err(CredentialError::TicketReplay(ticket.serial));
        }
        if keys.is_empty() {
            return Err(CredentialError::EmptyBatch);
        }
        let windows = self.partition(ticket.window, keys.len())?;
        for (index, k) in keys.iter().enumerate() {
            let pop = ShortTermKeyRequest::signed_bytes(&k.public);
            if !self
                .suite
                .verify(&pop, &k.signature, &k.public, &mut self.meter)
                .is_accept()
            {
                return Err(CredentialError::ShortTermKey { index });
            }
        }
        self.ledger.consumed.insert(ticket.serial);
        let mut issued = Vec::with_capacity(keys.len());
        for (k, window) in keys.iter().zip(windows) {
            let serial = self.fresh_serial();
            let tbs = PseudonymCertificate::signed_bytes(serial, &k.public, window);
            let issuer_signature = self.suite.sign(&tbs, &self.key, &mut self.meter);
            self.ledger
                .pseudonyms
                .insert(serial, (ticket.serial, window));
            issued.push(PseudonymCertificate {
                serial,
                public: k.public.clone(),
                window,
                issuer_signature,
            });
        }
        Ok(issued)
    }

    fn partition(&self, window: Window, parts: usize) -> Result<Vec<Window>, CredentialError> {
        if parts == 1 {
            return Ok(vec![window]);
        }
        let total = window.len().as_micros();
        let grid = self.policy.issuance_grid.as_micros();
        let n = parts as u64;
        if !total.is_multiple_of(n) || !(total / n).is_multiple_of(grid) {
            return Err(CredentialError::BatchNotAligned(parts));
        }
        let slice = total / n;
        Ok((0..n)
            .map(|i| {
                let from = window.from + SimTime(i * slice);
                Window::new(from, from + SimTime(slice))
            })
            .collect())
    }

    fn fresh_serial(&mut self) -> PcSerial {
        loop {
            let s = PcSerial(self.rng.next_u64());
            if !self.ledger.pseudonyms.contains_key(&s) {
                return s;
            }
        }
    }

    /// Answers the RA: which ticket paid for this pseudonym.
    pub fn ticket_of(&self, pc: PcSerial) -> Result<TicketSerial, CredentialError> {
        self.ledger
            .ticket_of(pc)
            .ok_or(CredentialError::UnknownPseudonym(pc))
    }

    pub fn policy(&self) -> &CredentialPolicy {
        &self.policy
    }

    #[cfg(test)]
    pub(crate) fn forget(&mut self, pc: PcSerial) {
        self.ledger.pseudonyms.remove(&pc);
    }
}
