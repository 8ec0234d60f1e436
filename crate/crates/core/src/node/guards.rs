use std::collections::HashMap;
use std::sync::Arc;

use crate::credentials::{PcSerial, PseudonymCertificate};
use crate::types::SimTime;

/// Accepted-query counts per pseudonym, local to one receiver.
#[derive(Clone, Debug)]
pub struct QuotaLedger {
    quota: u32,
    counts: HashMap<PcSerial, (u32, SimTime)>,
}

impl QuotaLedger {
    pub fn new(quota: u32) -> Self {
        QuotaLedger {
            quota,
            counts: HashMap::new(),
        }
    }

    pub fn quota(&self) -> u32 {
        self.quota
    }

    pub fn count(&self, pc: PcSerial) -> u32 {
        self.counts.get(&pc).map_or(0, |c| c.0)
    }

    pub fn is_exhausted(&self, pc: PcSerial) -> bool {
        self.count(pc) >= self.quota
    }

    /// Records one accepted query. The entry is kept until `expires`.
    pub fn record(&mut self, pc: PcSerial, expires: SimTime) {
        let e = self.counts.entry(pc).or_insert((0, expires));
        debug_assert!(e.0 < self.quota, "quota must be checked before recording");
        e.0 += 1;
    }

    pub fn prune(&mut self, now: SimTime) {
        self.counts.retain(|_, (_, exp)| *exp > now);
    }
}

/// PCs whose PCA signature has already been checked.
#[derive(Clone, Debug, Default)]
pub struct PseudonymCache {
    verified: HashMap<PcSerial, Arc<PseudonymCertificate>>,
}

impl PseudonymCache {
    pub fn get(&self, serial: PcSerial, now: SimTime) -> Option<&Arc<PseudonymCertificate>> {
        self.verified.get(&serial).filter(|pc| pc.window.to > now)
    }

    pub fn insert(&mut self, pc: Arc<PseudonymCertificate>) {
        self.verified.insert(pc.serial, pc);
    }

    pub fn purge(&mut self, now: SimTime) {
        self.verified.retain(|_, pc| pc.window.to > now);
    }

    pub fn len(&self) -> usize {
        self.verified.len()
    }

    pub fn is_empty(&self) -> bool {
        self.verified.is_empty()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum MessageKind {
    Query,
    Response,
}

/// Freshness window plus a seen-set of `(pseudonym, query id, kind)`.
#[derive(Clone, Debug)]
pub struct ReplayGuard {
    freshness: SimTime,
    seen: HashMap<(PcSerial, u32, MessageKind), (SimTime, u64)>,
}

impl ReplayGuard {
    pub fn new(freshness: SimTime) -> Self {
        ReplayGuard {
            freshness,
            seen: HashMap::new(),
        }
    }

    pub fn is_fresh(&self, issued_at: SimTime, now: SimTime) -> bool {
        issued_at.abs_diff(now) <= self.freshness
    }

    /// Digest of the first message seen under this key, if any.
    pub fn seen(&self, pc: PcSerial, id: u32, kind: MessageKind) -> Option<u64> {
        self.seen.get(&(pc, id, kind)).map(|e| e.1)
    }

    pub fn remember(
        &mut self,
        pc: PcSerial,
        id: u32,
        kind: MessageKind,
        issued_at: SimTime,
        digest: u64,
        now: SimTime,
    ) {
        if self.seen.len() >= 4096 {
            self.prune(now);
        }
        self.seen.insert((pc, id, kind), (issued_at, digest));
    }

    /// Entries older than the freshness window would fail the freshness
    /// check anyway, so they can go.
    pub fn prune(&mut self, now: SimTime) {
        let horizon = now.saturating_sub(self.freshness);
        self.seen.retain(|_, (t, _)| *t >= horizon);
    }

    pub fn len(&self) -> usize {
        self.seen.len()
    }

    pub fn is_empty(&self) -> bool {
        self.seen.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::{PublicKey, SchemeId, Signature};
    use crate::types::Window;

    #[test]
    fn quota_boundary() {
        let mut q = QuotaLedger::new(10);
        let pc = PcSerial(1);
        for _ in 0..10 {
            assert!(!q.is_exhausted(pc));
            q.record(pc, SimTime::from_secs(600));
        }
        assert!(q.is_exhausted(pc));
        q.prune(SimTime::from_secs(600));
        assert_eq!(q.count(pc), 0);
    }

    #[test]
    fn pseudonym_cache_forgets_expired() {
        let mut c = PseudonymCache::default();
        c.insert(Arc::new(PseudonymCertificate {
            serial: PcSerial(3),
            public: PublicKey::from_bytes(SchemeId::ModelRsa1024, vec![0; 162]).unwrap(),
            window: Window::new(SimTime::ZERO, SimTime::from_secs(10)),
            issuer_signature: Signature::from_bytes(SchemeId::ModelRsa2048, vec![0; 256]),
        }));
        assert!(c.get(PcSerial(3), SimTime::from_secs(9)).is_some());
        assert!(c.get(PcSerial(3), SimTime::from_secs(10)).is_none());
        c.purge(SimTime::from_secs(10));
        assert!(c.is_empty());
    }

    #[test]
    fn replay_guard_prunes_only_stale_entries() {
        let mut g = ReplayGuard::new(SimTime::from_secs(5));
        g.remember(
            PcSerial(1),
            1,
            MessageKind::Query,
            SimTime::from_secs(1),
            0,
            SimTime::from_secs(1),
        );
        g.remember(
            PcSerial(1),
            2,
            MessageKind::Query,
            SimTime::from_secs(9),
            0,
            SimTime::from_secs(9),
        );
        g.prune(SimTime::from_secs(10));
        assert_eq!(g.seen(PcSerial(1), 1, MessageKind::Query), None);
        assert_eq!(g.seen(PcSerial(1), 2, MessageKind::Query), Some(0));
        assert!(g.is_fresh(SimTime::from_secs(5), SimTime::from_secs(10)));
        assert!(!g.is_fresh(SimTime::from_secs(4), SimTime::from_secs(10)));
    }
}
