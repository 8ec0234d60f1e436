//! Which node an information need is attributed to.
//!
//! Two models:
//!
//! - self-only: `Pr(i, j) = 1` if `i == j`, else 0;
//! - weighted: `Pr(i, j) = w_j e^{-d(l_i, l_j)} / sum_k w_k e^{-d(l_i, l_k)}`
//!   with `d` the Euclidean distance divided by `distance_scale_m`.
//!
//! How the sampled index is used is a scenario choice ([`TargetReading`]):
//! either `j` issues the query (peer target) or `i` issues a query about
//! `j`'s location.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::placement::Placement;
use crate::types::NodeIndex;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RequestModelError {
    #[error("request weights must be non-negative with at least one positive entry")]
    BadWeights,
    #[error("expected {expected} weights, got {got}")]
    WeightCount { expected: usize, got: usize },
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TargetReading {
    /// The sampled node issues the query from its own position.
    #[default]
    PeerTarget,
    /// The arrival's node issues a query about the sampled node's position.
    QueryLocation,
}

#[derive(Clone, Debug, PartialEq)]
pub enum RequestModel {
    SelfOnly,
    Weighted {
        weights: Vec<f64>,
        distance_scale_m: f64,
    },
}

impl RequestModel {
    pub fn validate(&self, nodes: usize) -> Result<(), RequestModelError> {
        match self {
            RequestModel::SelfOnly => Ok(()),
            RequestModel::Weighted {
                weights,
                distance_scale_m,
            } => {
                if weights.len() != nodes {
                    return Err(RequestModelError::WeightCount {
                        expected: nodes,
                        got: weights.len(),
                    });
                }
                let bad = weights.iter().any(|w| !w.is_finite() || *w < 0.0)
                    || !weights.iter().any(|w| *w > 0.0)
                    || *distance_scale_m <= 0.0;
                if bad {
                    return Err(RequestModelError::BadWeights);
                }
                Ok(())
            }
        }
    }

    /// Closed-form target distribution for node `i`, evaluated in log space
    /// so that large distances do not underflow every term.
    pub fn probabilities(
        &self,
        i: NodeIndex,
        placement: &Placement,
    ) -> Result<Vec<f64>, RequestModelError> {
        self.validate(placement.len())?;
        match self {
            RequestModel::SelfOnly => {
                let mut p = vec![0.0; placement.len()];
                p[i.0] = 1.0;
                Ok(p)
            }
            RequestModel::Weighted {
                weights,
                distance_scale_m,
            } => {
                let logs: Vec<f64> = weights
                    .iter()
                    .enumerate()
                    .map(|(j, w)| {
                        if *w > 0.0 {
                            w.ln() - placement.distance(i, NodeIndex(j)) / distance_scale_m
                        } else {
                            f64::NEG_INFINITY
                        }
                    })
                    .collect();
                let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let terms: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
                let total: f64 = terms.iter().sum();
                Ok(terms.into_iter().map(|t| t / total).collect())
            }
        }
    }

    pub fn sample_request_target<R: Rng>(
        &self,
        i: NodeIndex,
        placement: &Placement,
        rng: &mut R,
    ) -> Result<NodeIndex, RequestModelError> {
        if let RequestModel::SelfOnly = self {
            return Ok(i);
        }
        let probs = self.probabilities(i, placement)?;
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        let mut last = i;
        for (j, p) in probs.iter().enumerate() {
            if *p > 0.0 {
                acc += p;
                last = NodeIndex(j);
                if u < acc {
                    return Ok(NodeIndex(j));
                }
            }
        }
        Ok(last)
    }
}
