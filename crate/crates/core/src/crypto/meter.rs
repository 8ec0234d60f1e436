use super::CostProfile;

/// Cost accumulator. Totals are kept in integer nanoseconds so that sums are
/// exact and independent of accumulation order.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct CostMeter {
    pub keygens: u64,
    pub signs: u64,
    pub verifies: u64,
    total_ns: u64,
}

pub(crate) fn ms_to_ns(ms: f64) -> u64 {
    (ms * 1e6).round() as u64
}

impl CostMeter {
    pub fn new() -> Self {
        Self::default()
    }

    pub(crate) fn charge_keygen(&mut self, p: &CostProfile) -> f64 {
        self.keygens += 1;
        self.total_ns += ms_to_ns(p.keygen_ms);
        p.keygen_ms
    }

    pub(crate) fn charge_sign(&mut self, p: &CostProfile) -> f64 {
        self.signs += 1;
        self.total_ns += ms_to_ns(p.sign_ms);
        p.sign_ms
    }

    pub(crate) fn charge_verify(&mut self, p: &CostProfile) -> f64 {
        self.verifies += 1;
        self.total_ns += ms_to_ns(p.verify_ms);
        p.verify_ms
    }

    pub fn total_ns(&self) -> u64 {
        self.total_ns
    }

    pub fn total_ms(&self) -> f64 {
        self.total_ns as f64 / 1e6
    }

    pub fn absorb(&mut self, other: &CostMeter) {
        self.keygens += other.keygens;
        self.signs += other.signs;
        self.verifies += other.verifies;
        self.total_ns += other.total_ns;
    }
}
