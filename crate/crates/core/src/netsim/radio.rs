use rand::Rng;
use serde::{Deserialize, Serialize};

use super::placement::{Mobility, Placement};
use crate::types::{NodeIndex, SimTime};

/// Unit-disk broadcast channel with independent per-receiver loss.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RadioModel {
    #[serde(default = "default_range")]
    pub range_m: f64,
    #[serde(default = "default_delay")]
    pub propagation_delay_ms: f64,
    #[serde(default)]
    pub loss_probability: f64,
}

fn default_range() -> f64 {
    100.0
}

fn default_delay() -> f64 {
    1.0
}

impl Default for RadioModel {
    fn default() -> Self {
        RadioModel {
            range_m: default_range(),
            propagation_delay_ms: default_delay(),
            loss_probability: 0.0,
        }
    }
}

impl RadioModel {
    pub fn propagation_delay(&self) -> SimTime {
        SimTime::from_secs_f64(self.propagation_delay_ms / 1e3)
    }
}

/// Precomputed neighbor lists for a placement. Lists are sorted by node
/// index so that delivery order is deterministic.
#[derive(Clone, Debug)]
pub struct Topology {
    radio: RadioModel,
    neighbors: Vec<Vec<NodeIndex>>,
}

impl Topology {
    pub fn build(placement: &Placement, radio: RadioModel) -> Self {
        let mut t = Topology {
            radio,
            neighbors: Vec::new(),
        };
        t.rebuild(placement, placement, SimTime::ZERO);
        t
    }

    pub fn radio(&self) -> &RadioModel {
        &self.radio
    }

    /// Recomputes neighbor lists from node positions at time `t`.
    pub fn rebuild(&mut self, placement: &Placement, mobility: &dyn Mobility, t: SimTime) {
        let area = placement.area;
        let n = placement.len();
        let pos: Vec<_> = (0..n)
            .map(|i| mobility.position_at(NodeIndex(i), t))
            .collect();
        let range = self.radio.range_m;
        let cols = ((area.width_m / range).floor() as usize).max(1);
        let rows = ((area.height_m / range).floor() as usize).max(1);
        let cw = area.width_m / cols as f64;
        let ch = area.height_m / rows as f64;
        let cell_of = |i: usize| {
            let cx = ((pos[i].x / cw) as usize).min(cols - 1);
            let cy = ((pos[i].y / ch) as usize).min(rows - 1);
            (cx, cy)
        };
        let mut cells: Vec<Vec<usize>> = vec![Vec::new(); cols * rows];
        for i in 0..n {
            let (cx, cy) = cell_of(i);
            cells[cy * cols + cx].push(i);
        }
        let offsets = |c: usize, max: usize| -> Vec<usize> {
            let mut v = Vec::with_capacity(3);
            for d in [-1i64, 0, 1] {
                let k = c as i64 + d;
                let k = if area.torus {
                    Some(k.rem_euclid(max as i64) as usize)
                } else if k < 0 || k >= max as i64 {
                    None
                } else {
                    Some(k as usize)
                };
                if let Some(k) = k {
                    if !v.contains(&k) {
                        v.push(k);
                    }
                }
            }
            v
        };
        self.neighbors = (0..n)
            .map(|i| {
                let (cx, cy) = cell_of(i);
                let mut list = Vec::new();
                for y in offsets(cy, rows) {
                    for x in offsets(cx, cols) {
                        for &j in &cells[y * cols + x] {
                            if j != i && area.distance(&pos[i], &pos[j]) <= range {
                                list.push(NodeIndex(j));
                            }
                        }
                    }
                }
                list.sort();
                list
            })
            .collect();
    }

    pub fn neighbors(&self, i: NodeIndex) -> &[NodeIndex] {
        &self.neighbors[i.0]
    }

    pub fn len(&self) -> usize {
        self.neighbors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.neighbors.is_empty()
    }

    pub fn mean_degree(&self) -> f64 {
        if self.neighbors.is_empty() {
            return 0.0;
        }
        self.neighbors.iter().map(Vec::len).sum::<usize>() as f64 / self.neighbors.len() as f64
    }

    /// Nodes that receive one broadcast from `sender`, after loss.
    pub fn broadcast<R: Rng>(&self, sender: NodeIndex, rng: &mut R) -> Vec<NodeIndex> {
        let p = self.radio.loss_probability;
        let all = self.neighbors(sender);
        if p <= 0.0 {
            return all.to_vec();
        }
        all.iter()
            .copied()
            .filter(|_| rng.gen::<f64>() >= p)
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netsim::placement::Area;
    use crate::types::Point;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn line(xs: &[f64]) -> Placement {
        Placement::explicit(
            Area {
                width_m: 1000.0,
                height_m: 1000.0,
                torus: false,
            },
            xs.iter().map(|x| Point::new(*x, 500.0)).collect(),
        )
    }

    #[test]
    fn lossless_broadcast_reaches_everyone_in_range() {
        let p = line(&[100.0, 150.0, 180.0, 199.0]);
        let t = Topology::build(&p, RadioModel::default());
        let got = t.broadcast(NodeIndex(0), &mut ChaCha8Rng::seed_from_u64(1));
        assert_eq!(got, vec![NodeIndex(1), NodeIndex(2), NodeIndex(3)]);
    }

    #[test]
    fn range_boundary_is_inclusive() {
        let p = line(&[100.0, 200.0, 200.0 + 1e-9]);
        let t = Topology::build(&p, RadioModel::default());
        assert_eq!(t.neighbors(NodeIndex(0)), &[NodeIndex(1)]);
    }

    #[test]
    fn total_loss_delivers_nothing() {
        let p = line(&[100.0, 150.0, 180.0]);
        let radio = RadioModel {
            loss_probability: 1.0,
            ..Default::default()
        };
        let t = Topology::build(&p, radio);
        assert!(t
            .broadcast(NodeIndex(0), &mut ChaCha8Rng::seed_from_u64(1))
            .is_empty());
    }

    proptest! {
        #[test]
        fn grid_neighbors_match_brute_force(seed in any::<u64>(), n in 1usize..120, torus in any::<bool>(), range in 20.0f64..400.0) {
            let area = Area { width_m: 700.0, height_m: 450.0, torus };
            let p = Placement::uniform(area, n, &mut ChaCha8Rng::seed_from_u64(seed));
            let t = Topology::build(&p, RadioModel { range_m: range, ..Default::default() });
            for i in 0..n {
                let expected: Vec<_> = (0..n)
                    .filter(|&j| j != i && area.distance(&p.positions[i], &p.positions[j]) <= range)
                    .map(NodeIndex)
                    .collect();
                prop_assert_eq!(t.neighbors(NodeIndex(i)), expected.as_slice());
            }
        }
    }
}
