use serde::{Deserialize, Serialize};

/// Per-run aggregates, written as `metrics.json`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub nodes: usize,
    pub duration_s: f64,
    pub mean_degree: f64,

    pub total_needs: u64,
    pub locally_served: u64,
    pub peer_served: u64,
    pub lbs_served: u64,
    pub unsatisfied: u64,
    /// LBS contacts per information need.
    pub lbs_exposure_ratio: f64,
    pub peer_served_ratio: f64,
    pub latency_mean_ms: f64,
    pub latency_p95_ms: f64,

    pub broadcasts: u64,
    /// Per-receiver transmissions: every node in range of a broadcast, before loss.
    pub messages_sent: u64,
    pub messages_delivered: u64,
    /// Messages that passed verification, for the receiver's own use or overheard.
    pub messages_accepted: u64,
    pub messages_overheard: u64,
    pub queries_sent: u64,
    pub responses_sent: u64,
    pub responses_suppressed: u64,
    pub query_receptions: u64,
    pub mean_received_query_rate_per_s: f64,

    pub pc_verifications: u64,
    pub pc_cache_hits: u64,
    pub message_verifications: u64,
    pub crypto_time_ms: f64,
    pub crypto_keygens: u64,
    pub crypto_signs: u64,
    pub crypto_verifies: u64,

    pub quota_drops: u64,
    pub dropped_messages: u64,
    pub reports_filed: u64,
    pub reports_rejected: u64,
    pub resolutions: u64,
    pub evictions: u64,
    pub lbs_contacts: u64,
    pub server_log_entries: u64,

    pub invariant_violations: Vec<String>,
}

impl MetricsRecord {
    /// Internal consistency of the counters; returns the names of any
    /// relations that do not hold.
    pub fn consistency_violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if self.locally_served + self.peer_served + self.lbs_served + self.unsatisfied
            != self.total_needs
        {
            v.push("need_conservation".to_string());
        }
        if !(self.messages_sent >= self.messages_delivered
            && self.messages_delivered >= self.messages_accepted)
        {
            v.push("message_monotonicity".to_string());
        }
        for (name, r) in [
            ("lbs_exposure_ratio", self.lbs_exposure_ratio),
            ("peer_served_ratio", self.peer_served_ratio),
        ] {
            if !(0.0..=1.0).contains(&r) {
                v.push(format!("ratio_range:{name}"));
            }
        }
        if self.lbs_contacts != self.server_log_entries {
            v.push("lbs_log_accounting".to_string());
        }
        v
    }
}

/// Nearest-rank percentile of an unsorted sample.
pub fn percentile(values: &mut [f64], p: f64) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.sort_by(f64::total_cmp);
    let rank = ((p / 100.0) * values.len() as f64).ceil().max(1.0) as usize;
    values[rank.min(values.len()) - 1]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nearest_rank_percentile() {
        let mut v: Vec<f64> = (1..=20).map(f64::from).collect();
        assert_eq!(percentile(&mut v, 95.0), 19.0);
        assert_eq!(percentile(&mut v, 100.0), 20.0);
        assert_eq!(percentile(&mut [], 95.0), 0.0);
    }

    #[test]
    fn detects_broken_conservation() {
        let m = MetricsRecord {
            total_needs: 3,
            lbs_served: 2,
            ..Default::default()
        };
        assert_eq!(
            m.consistency_violations(),
            vec!["need_conservation".to_string()]
        );
    }
}
