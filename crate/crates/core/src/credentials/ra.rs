use std::collections::BTreeSet;

use super::{CredentialError, Ltca, PcSerial, Pca, PseudonymCertificate, TicketSerial};
use crate::crypto::{CostMeter, CryptoSuite, KeyPair, PublicKey, Signature};

/// One signed message submitted as evidence, with the pseudonym it was signed under.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EvidenceItem {
    pub payload: Vec<u8>,
    pub signature: Signature,
    pub pc: PseudonymCertificate,
}

/// What the reporter alleges.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Claim {
    /// More than `quota` distinct queries under one pseudonym.
    QuotaViolation { quota: u32 },
    /// Two responses to the same query id under one pseudonym with different contents.
    Equivocation,
    /// A peer response disagrees with the LBS answer to the same query.
    GroundTruth {
        lbs_payload: Vec<u8>,
        lbs_signature: Option<Signature>,
    },
}

impl Claim {
    pub fn name(&self) -> &'static str {
        match self {
            Claim::QuotaViolation { .. } => "quota",
            Claim::Equivocation => "equivocation",
            Claim::GroundTruth { .. } => "ground-truth",
        }
    }

    fn encode(&self, buf: &mut Vec<u8>) {
        match self {
            Claim::QuotaViolation { quota } => {
                buf.push(1);
                buf.extend_from_slice(&quota.to_be_bytes());
            }
            Claim::Equivocation => buf.push(2),
            Claim::GroundTruth {
                lbs_payload,
                lbs_signature,
            } => {
                buf.push(3);
                buf.extend_from_slice(&(lbs_payload.len() as u32).to_be_bytes());
                buf.extend_from_slice(lbs_payload);
                if let Some(s) = lbs_signature {
                    buf.extend_from_slice(s.as_bytes());
                }
            }
        }
    }
}

/// `{{msg}_PC_i, PC_i}` items wrapped and signed under the reporter's pseudonym.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MisbehaviorReport {
    pub claim: Claim,
    pub evidence: Vec<EvidenceItem>,
    pub reporter_pc: PseudonymCertificate,
    pub reporter_signature: Signature,
}

impl MisbehaviorReport {
    pub fn signed_bytes(claim: &Claim, evidence: &[EvidenceItem], reporter: PcSerial) -> Vec<u8> {
        let mut buf = b"report/v1".to_vec();
        buf.extend_from_slice(&reporter.0.to_be_bytes());
        claim.encode(&mut buf);
        for e in evidence {
            buf.extend_from_slice(&e.pc.serial.0.to_be_bytes());
            buf.extend_from_slice(&(e.payload.len() as u32).to_be_bytes());
            buf.extend_from_slice(&e.payload);
            buf.extend_from_slice(e.signature.as_bytes());
        }
        buf
    }

    pub fn new(
        claim: Claim,
        evidence: Vec<EvidenceItem>,
        reporter_pc: PseudonymCertificate,
        reporter_key: &KeyPair,
        suite: &CryptoSuite,
        meter: &mut CostMeter,
    ) -> Self {
        let tbs = Self::signed_bytes(&claim, &evidence, reporter_pc.serial);
        let reporter_signature = suite.sign(&tbs, reporter_key, meter);
        MisbehaviorReport {
            claim,
            evidence,
            reporter_pc,
            reporter_signature,
        }
    }

    /// Distinct pseudonyms the evidence was signed under.
    pub fn suspects(&self) -> BTreeSet<PcSerial> {
        self.evidence.iter().map(|e| e.pc.serial).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Judgement {
    Guilty(Vec<PcSerial>),
    NotProven(String),
}

/// Decides whether verified evidence proves misbehavior. Signature checks
/// are done by the RA before the judge runs.
pub trait EvidenceJudge: Send {
    fn judge(&self, report: &MisbehaviorReport) -> Judgement;
}

/// Convicts every suspect of any report whose signatures verify.
pub struct AcceptAll;

impl EvidenceJudge for AcceptAll {
    fn judge(&self, report: &MisbehaviorReport) -> Judgement {
        Judgement::Guilty(report.suspects().into_iter().collect())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Resolution {
    pub node_id: String,
    pub pseudonyms: Vec<PcSerial>,
    pub tickets: Vec<TicketSerial>,
    pub revoked: bool,
}

/// Resolution authority.
pub struct Ra {
    pca_key: PublicKey,
    suite: CryptoSuite,
    judge: Box<dyn EvidenceJudge>,
    pub meter: CostMeter,
}

impl Ra {
    pub fn new(suite: CryptoSuite, pca_key: PublicKey, judge: Box<dyn EvidenceJudge>) -> Self {
        Ra {
            pca_key,
            suite,
            judge,
            meter: CostMeter::new(),
        }
    }

    pub fn set_judge(&mut self, judge: Box<dyn EvidenceJudge>) {
        self.judge = judge;
    }

    fn verify_pc(&mut self, pc: &PseudonymCertificate) -> bool {
        pc.verify(&self.pca_key, &self.suite, &mut self.meter)
            .is_accept()
    }

    /// Verifies the report, asks the judge, then maps the guilty pseudonym
    /// to its ticket (PCA) and the ticket to its holder (LTCA). With
    /// `revoke` set the holder is denied future tickets.
    pub fn resolve(
        &mut self,
        report: &MisbehaviorReport,
        pca: &Pca,
        ltca: &mut Ltca,
        revoke: bool,
    ) -> Result<Resolution, CredentialError> {
        let rejected = |why: &str| CredentialError::ReportRejected(why.to_string());
        if !self.verify_pc(&report.reporter_pc) {
            return Err(rejected("reporter pseudonym does not verify"));
        }
        let tbs = MisbehaviorReport::signed_bytes(
            &report.claim,
            &report.evidence,
            report.reporter_pc.serial,
        );
        if !self
            .suite
            .verify(
                &tbs,
                &report.reporter_signature,
                &report.reporter_pc.public,
                &mut self.meter,
            )
            .is_accept()
        {
            return Err(rejected("report signature does not verify"));
        }
        if report.evidence.is_empty() {
            return Err(rejected("no evidence"));
        }
        for item in &report.evidence {
            if !self.verify_pc(&item.pc) {
                return Err(rejected("evidence pseudonym does not verify"));
            }
            if !self
                .suite
                .verify(
                    &item.payload,
                    &item.signature,
                    &item.pc.public,
                    &mut self.meter,
                )
                .is_accept()
            {
                return Err(rejected("evidence signature does not verify"));
            }
        }
        let guilty = match self.judge.judge(report) {
            Judgement::Guilty(g) if !g.is_empty() => g,
            Judgement::Guilty(_) => return Err(rejected("judge named no suspect")),
            Judgement::NotProven(why) => return Err(CredentialError::ReportRejected(why)),
        };
        let mut tickets = Vec::new();
        let mut identities = BTreeSet::new();
        for pc in &guilty {
            let ticket = pca.ticket_of(*pc)?;
            identities.insert(ltca.identify(ticket)?);
            tickets.push(ticket);
        }
        if identities.len() != 1 {
            return Err(rejected("evidence spans several identities"));
        }
        let node_id = identities.into_iter().next().unwrap_or_default();
        let revoked = revoke && ltca.revoke(&node_id);
        Ok(Resolution {
            node_id,
            pseudonyms: guilty,
            tickets,
            revoked,
        })
    }
}
