use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use super::messages::{query_from_signed_bytes, ResponsePayload};
use crate::credentials::{Claim, EvidenceJudge, Judgement, MisbehaviorReport};
use crate::crypto::{CostMeter, CryptoSuite, PublicKey};
use crate::lbs::{within_radius, LbsRequest, LbsResponse, Poi, PoiDatabase};

/// Exact-contradiction test: some claimed record falls inside the request
/// (type and radius) but is missing from the truth set or differs from the
/// truth record with the same id.
pub fn contradicts(request: &LbsRequest, truth: &[Poi], claimed: &[Poi]) -> bool {
    let by_id: BTreeMap<u32, &Poi> = truth.iter().map(|p| (p.id, p)).collect();
    claimed.iter().any(|c| {
        c.poi_type == request.poi_type
            && within_radius(&request.location, &c.location, request.radius_m)
            && by_id
                .get(&c.id)
                .is_none_or(|t| t.location != c.location || t.payload != c.payload)
    })
}

/// Default evidence predicate for the resolution authority. It accepts the
/// three claims nodes file: quota violation, equivocation, and contradiction
/// of LBS ground truth. Ground truth comes from a server-signed response
/// when `lbs_key` is set, otherwise from direct database access.
pub struct ProtocolJudge {
    pub suite: CryptoSuite,
    pub lbs_key: Option<PublicKey>,
    pub db: Option<Arc<PoiDatabase>>,
}

impl ProtocolJudge {
    fn quota(&self, report: &MisbehaviorReport, quota: u32) -> Judgement {
        let serials: BTreeSet<_> = report.evidence.iter().map(|e| e.pc.serial).collect();
        if serials.len() != 1 {
            return Judgement::NotProven("quota evidence must share one pseudonym".into());
        }
        let mut ids = BTreeSet::new();
        for e in &report.evidence {
            let Some(q) = query_from_signed_bytes(&e.payload) else {
                return Judgement::NotProven("evidence is not a query".into());
            };
            if !e.pc.window.contains(q.issued_at) {
                return Judgement::NotProven("query outside pseudonym window".into());
            }
            ids.insert(q.query_id);
        }
        if ids.len() as u64 > quota as u64 {
            Judgement::Guilty(serials.into_iter().collect())
        } else {
            Judgement::NotProven(format!(
                "{} distinct queries do not exceed quota {quota}",
                ids.len()
            ))
        }
    }

    fn equivocation(&self, report: &MisbehaviorReport) -> Judgement {
        let mut by_key: BTreeMap<_, Vec<&[u8]>> = BTreeMap::new();
        for e in &report.evidence {
            let Some(r) = ResponsePayload::from_signed_bytes(&e.payload) else {
                return Judgement::NotProven("evidence is not a response".into());
            };
            by_key
                .entry((e.pc.serial, r.query_id))
                .or_default()
                .push(&e.payload);
        }
        let guilty: Vec<_> = by_key
            .into_iter()
            .filter(|(_, v)| v.iter().any(|p| *p != v[0]))
            .map(|((s, _), _)| s)
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        if guilty.is_empty() {
            Judgement::NotProven("no conflicting responses".into())
        } else {
            Judgement::Guilty(guilty)
        }
    }

    fn ground_truth(
        &self,
        report: &MisbehaviorReport,
        lbs_payload: &[u8],
        lbs_sig: Option<&crate::crypto::Signature>,
    ) -> Judgement {
        let Some((request, signed_truth)) = LbsResponse::decode(lbs_payload) else {
            return Judgement::NotProven("unreadable ground truth".into());
        };
        let truth: Vec<Poi> = match (&self.lbs_key, lbs_sig, &self.db) {
            (Some(key), Some(sig), _) => {
                if !self
                    .suite
                    .verify(lbs_payload, sig, key, &mut CostMeter::new())
                    .is_accept()
                {
                    return Judgement::NotProven("ground truth signature does not verify".into());
                }
                signed_truth
            }
            (_, _, Some(db)) => db
                .within(request.poi_type, &request.location, request.radius_m)
                .into_iter()
                .cloned()
                .collect(),
            _ => return Judgement::NotProven("ground truth cannot be established".into()),
        };
        let mut guilty = BTreeSet::new();
        for e in &report.evidence {
            let Some(r) = ResponsePayload::from_signed_bytes(&e.payload) else {
                return Judgement::NotProven("evidence is not a response".into());
            };
            if contradicts(&request, &truth, &r.records) {
                guilty.insert(e.pc.serial);
            }
        }
        if guilty.is_empty() {
            Judgement::NotProven("responses agree with ground truth".into())
        } else {
            Judgement::Guilty(guilty.into_iter().collect())
        }
    }
}

impl EvidenceJudge for ProtocolJudge {
    fn judge(&self, report: &MisbehaviorReport) -> Judgement {
        match &report.claim {
            Claim::QuotaViolation { quota } => self.quota(report, *quota),
            Claim::Equivocation => self.equivocation(report),
            Claim::GroundTruth {
                lbs_payload,
                lbs_signature,
            } => self.ground_truth(report, lbs_payload, lbs_signature.as_ref()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{PoiType, Point, SimTime};

    fn poi(id: u32, x: f64, payload: &str) -> Poi {
        Poi {
            id,
            location: Point::new(x, 0.0),
            poi_type: PoiType(1),
            payload: payload.as_bytes().into(),
        }
    }

    fn req() -> LbsRequest {
        LbsRequest {
            location: Point::new(0.0, 0.0),
            poi_type: PoiType(1),
            radius_m: 100.0,
            issued_at: SimTime::ZERO,
        }
    }

    #[test]
    fn agreement_and_partial_answers_are_not_contradictions() {
        let truth = vec![poi(1, 10.0, "a"), poi(2, 20.0, "b")];
        assert!(!contradicts(&req(), &truth, &truth));
        assert!(!contradicts(&req(), &truth, &truth[..1]));
        assert!(!contradicts(&req(), &truth, &[]));
        // outside the request: cannot be judged against this answer
        assert!(!contradicts(&req(), &truth, &[poi(9, 500.0, "x")]));
    }

    #[test]
    fn altered_or_fabricated_records_contradict() {
        let truth = vec![poi(1, 10.0, "a")];
        assert!(contradicts(&req(), &truth, &[poi(1, 10.0, "closed")]));
        assert!(contradicts(&req(), &truth, &[poi(1, 11.0, "a")]));
        assert!(contradicts(&req(), &truth, &[poi(7, 10.0, "a")]));
    }
}
