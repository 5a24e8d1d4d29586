use super::{Neighbor, Pedestrian};
use crate::geometry::{Vec2, EPS};
use crate::world::World;
use serde::{Deserialize, Serialize};

/// Helbing–Molnár social force parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SfmParams {
    /// Relaxation time (s).
    pub tau: f64,
    /// Repulsion strength (m/s²).
    pub a: f64,
    /// Repulsion range (m).
    pub b: f64,
    /// Cap on any single repulsive term.
    pub f_max: f64,
}

impl Default for SfmParams {
    fn default() -> Self {
        SfmParams { tau: 0.5, a: 2.0, b: 0.3, f_max: 20.0 }
    }
}

impl SfmParams {
    fn repulsion(&self, overlap: f64) -> f64 {
        (self.a * (overlap / self.b).exp()).min(self.f_max)
    }
}

/// Driving term toward the current waypoint plus exponential repulsion
/// from every neighbor and every static edge.
pub fn sfm_accel(p: &Pedestrian, others: &[Neighbor], world: &World, params: &SfmParams) -> Vec2 {
    let mut acc = (p.preferred_velocity() - p.velocity) / params.tau;

    for o in others {
        let diff = p.position - o.position;
        let d = diff.norm();
        let n = if d > EPS {
            diff / d
        } else if p.id.as_str() < o.id.as_str() {
            Vec2::new(1.0, 0.0)
        } else {
            Vec2::new(-1.0, 0.0)
        };
        acc += n * params.repulsion(p.radius + o.radius - d);
    }

    let mut wall = |closest: Vec2, fallback: Vec2| {
        let diff = p.position - closest;
        let d = diff.norm();
        let n = if d > EPS { diff / d } else { fallback };
        acc += n * params.repulsion(p.radius - d);
    };
    for s in world.wall_segments() {
        wall(s.closest_point(p.position), (s.b - s.a).normalized().perp());
    }
    for poly in &world.polygons {
        let q = poly.closest_boundary_point(p.position);
        wall(q, (q - poly.centroid()).normalized());
    }
    acc
}
