use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::{NodeIndex, PoiType, SimTime};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WorkloadError {
    #[error("query rate must be positive, got {0}")]
    NonPositiveRate(f64),
    #[error("POI type distribution must have positive total weight")]
    EmptyDistribution,
}

/// Relative frequency of one POI type among information needs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoiWeight {
    pub poi_type: u16,
    pub weight: f64,
}

/// One information need of one node.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Arrival {
    pub at: SimTime,
    pub node: NodeIndex,
    pub poi_type: PoiType,
}

/// Per-node Poisson arrivals at `rate_per_min` over `[0, duration)`, each
/// with a POI type drawn from `distribution`. Sorted by time, then node.
pub fn generate_workload<R: Rng>(
    nodes: usize,
    rate_per_min: f64,
    distribution: &[PoiWeight],
    duration: SimTime,
    rng: &mut R,
) -> Result<Vec<Arrival>, WorkloadError> {
    if !(rate_per_min > 0.0 && rate_per_min.is_finite()) {
        return Err(WorkloadError::NonPositiveRate(rate_per_min));
    }
    let types = WeightedIndex::new(distribution.iter().map(|w| w.weight))
        .map_err(|_| WorkloadError::EmptyDistribution)?;
    let rate_per_us = rate_per_min / 60e6;
    let mut out = Vec::new();
    for node in 0..nodes {
        let mut t = 0.0f64;
        loop {
            let u: f64 = rng.gen();
            t += -(1.0 - u).ln() / rate_per_us;
            if t >= duration.as_micros() as f64 {
                break;
            }
            out.push(Arrival {
                at: SimTime(t as u64),
                node: NodeIndex(node),
                poi_type: PoiType(distribution[types.sample(rng)].poi_type),
            });
        }
    }
    out.sort_by_key(|a| (a.at, a.node));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn one_type() -> Vec<PoiWeight> {
        vec![PoiWeight {
            poi_type: 3,
            weight: 1.0,
        }]
    }

    #[test]
    fn aggregate_rate_matches_per_node_rate() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let w =
            generate_workload(100, 1.0, &one_type(), SimTime::from_secs(3600), &mut rng).unwrap();
        // expected 100 nodes * 60 min = 6000 arrivals
        let per_min = w.len() as f64 / 60.0;
        assert!((per_min - 100.0).abs() / 100.0 < 0.05, "{per_min}");
        assert!(w.windows(2).all(|p| p[0].at <= p[1].at));
        assert!(w.iter().all(|a| a.poi_type == PoiType(3)));
    }

    #[test]
    fn zero_rate_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(
            generate_workload(1, 0.0, &one_type(), SimTime::from_secs(60), &mut rng),
            Err(WorkloadError::NonPositiveRate(0.0))
        );
    }

    #[test]
    fn types_follow_distribution() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let dist = vec![
            PoiWeight {
                poi_type: 0,
                weight: 3.0,
            },
            PoiWeight {
                poi_type: 1,
                weight: 1.0,
            },
        ];
        let w = generate_workload(200, 2.0, &dist, SimTime::from_secs(3600), &mut rng).unwrap();
        let zeros = w.iter().filter(|a| a.poi_type == PoiType(0)).count() as f64;
        let share = zeros / w.len() as f64;
        assert!((share - 0.75).abs() < 0.01, "{share}");
    }
}
