use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::types::{NodeIndex, Point, SimTime};

/// Rectangular deployment area. With `torus` set the edges wrap around,
/// which removes border effects from density experiments.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Area {
    pub width_m: f64,
    pub height_m: f64,
    #[serde(default)]
    pub torus: bool,
}

impl Area {
    pub fn km2(&self) -> f64 {
        self.width_m * self.height_m / 1e6
    }

    pub fn contains(&self, p: &Point) -> bool {
        (0.0..=self.width_m).contains(&p.x) && (0.0..=self.height_m).contains(&p.y)
    }

    pub fn distance(&self, a: &Point, b: &Point) -> f64 {
        if !self.torus {
            return a.distance(b);
        }
        let mut dx = (a.x - b.x).abs();
        let mut dy = (a.y - b.y).abs();
        dx = dx.min(self.width_m - dx);
        dy = dy.min(self.height_m - dy);
        dx.hypot(dy)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Placement {
    pub area: Area,
    pub positions: Vec<Point>,
}

impl Placement {
    pub fn explicit(area: Area, positions: Vec<Point>) -> Self {
        Placement { area, positions }
    }

    pub fn uniform<R: Rng>(area: Area, n: usize, rng: &mut R) -> Self {
        let positions = (0..n)
            .map(|_| {
                Point::new(
                    rng.gen::<f64>() * area.width_m,
                    rng.gen::<f64>() * area.height_m,
                )
            })
            .collect();
        Placement { area, positions }
    }

    /// Uniform placement with `round(density * area)` nodes.
    pub fn from_density<R: Rng>(area: Area, per_km2: f64, rng: &mut R) -> Self {
        let n = (per_km2 * area.km2()).round() as usize;
        Self::uniform(area, n, rng)
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn position(&self, i: NodeIndex) -> Point {
        self.positions[i.0]
    }

    pub fn distance(&self, i: NodeIndex, j: NodeIndex) -> f64 {
        self.area
            .distance(&self.positions[i.0], &self.positions[j.0])
    }

    pub fn density_per_km2(&self) -> f64 {
        self.positions.len() as f64 / self.area.km2()
    }
}

/// Position of a node over time.
pub trait Mobility {
    fn position_at(&self, node: NodeIndex, t: SimTime) -> Point;
}

/// Nodes never move.
impl Mobility for Placement {
    fn position_at(&self, node: NodeIndex, _t: SimTime) -> Point {
        self.position(node)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn density_placement_stays_in_bounds() {
        let area = Area {
            width_m: 500.0,
            height_m: 200.0,
            torus: false,
        };
        let p = Placement::from_density(area, 3000.0, &mut ChaCha8Rng::seed_from_u64(1));
        assert_eq!(p.len(), 300);
        assert!(p.positions.iter().all(|q| area.contains(q)));
    }

    #[test]
    fn torus_distance_wraps() {
        let area = Area {
            width_m: 1000.0,
            height_m: 1000.0,
            torus: true,
        };
        let d = area.distance(&Point::new(5.0, 500.0), &Point::new(995.0, 500.0));
        assert!((d - 10.0).abs() < 1e-9);
        let flat = Area {
            torus: false,
            ..area
        };
        assert!(
            (flat.distance(&Point::new(5.0, 500.0), &Point::new(995.0, 500.0)) - 990.0).abs()
                < 1e-9
        );
    }
}
