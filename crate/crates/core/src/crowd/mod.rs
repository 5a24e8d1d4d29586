//! Simulated pedestrians: social-force and ORCA agents plus scripted replay.

mod orca;
mod sfm;

pub use orca::{orca_lines, orca_velocity, solve_velocity, HalfPlane, OrcaParams};
pub use sfm::{sfm_accel, SfmParams};

use crate::geometry::Vec2;
use crate::world::{Disc, World, PEDESTRIAN_RADIUS};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

/// Waypoints count as reached inside this distance.
pub const WAYPOINT_TOLERANCE: f64 = 0.3;
/// Speed cap relative to desired speed.
pub const SPEED_FACTOR: f64 = 1.3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PedestrianModel {
    #[serde(alias = "Sfm")]
    SFM,
    #[serde(alias = "Orca")]
    ORCA,
    Scripted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pedestrian {
    pub id: String,
    pub position: Vec2,
    pub velocity: Vec2,
    pub v0: f64,
    pub radius: f64,
    pub waypoints: Vec<Vec2>,
    pub waypoint_index: usize,
    pub model: PedestrianModel,
    pub vip: bool,
    /// Positions replayed one per tick by scripted pedestrians.
    pub trajectory: Vec<Vec2>,
    pub tick: usize,
}

/// Scenario-file form: `{id, start, waypoints, model, v0, vip}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PedestrianConfig {
    pub id: String,
    pub start: Vec2,
    #[serde(default)]
    pub waypoints: Vec<Vec2>,
    pub model: PedestrianModel,
    #[serde(default = "default_v0")]
    pub v0: f64,
    #[serde(default)]
    pub vip: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub radius: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub trajectory: Vec<Vec2>,
}

fn default_v0() -> f64 {
    1.0
}

impl From<&PedestrianConfig> for Pedestrian {
    fn from(c: &PedestrianConfig) -> Self {
        Pedestrian {
            id: c.id.clone(),
            position: c.start,
            velocity: Vec2::ZERO,
            v0: c.v0,
            radius: c.radius.unwrap_or(PEDESTRIAN_RADIUS),
            waypoints: c.waypoints.clone(),
            waypoint_index: 0,
            model: c.model,
            vip: c.vip,
            trajectory: c.trajectory.clone(),
            tick: 0,
        }
    }
}

impl Pedestrian {
    pub fn new(id: impl Into<String>, position: Vec2, model: PedestrianModel) -> Self {
        Pedestrian {
            id: id.into(),
            position,
            velocity: Vec2::ZERO,
            v0: 1.0,
            radius: PEDESTRIAN_RADIUS,
            waypoints: Vec::new(),
            waypoint_index: 0,
            model,
            vip: false,
            trajectory: Vec::new(),
            tick: 0,
        }
    }

    pub fn with_waypoints(mut self, waypoints: Vec<Vec2>) -> Self {
        self.waypoints = waypoints;
        self
    }

    pub fn max_speed(&self) -> f64 {
        SPEED_FACTOR * self.v0
    }

    pub fn current_waypoint(&self) -> Option<Vec2> {
        self.waypoints.get(self.waypoint_index % self.waypoints.len().max(1)).copied()
    }

    /// Unit vector toward the current waypoint, zero once a final
    /// (single) waypoint is reached or when there is none.
    pub fn desired_direction(&self) -> Vec2 {
        match self.current_waypoint() {
            Some(w) if self.waypoints.len() > 1 || w.distance(self.position) > WAYPOINT_TOLERANCE => {
                (w - self.position).normalized()
            }
            _ => Vec2::ZERO,
        }
    }

    pub fn preferred_velocity(&self) -> Vec2 {
        self.desired_direction() * self.v0
    }

    pub fn as_neighbor(&self) -> Neighbor {
        Neighbor { id: self.id.clone(), position: self.position, velocity: self.velocity, radius: self.radius, reciprocal: true }
    }

    pub fn disc(&self) -> Disc {
        Disc { id: self.id.clone(), center: self.position, radius: self.radius }
    }

    fn advance_waypoint(&mut self) {
        if self.waypoints.len() > 1 {
            if let Some(w) = self.current_waypoint() {
                if w.distance(self.position) <= WAYPOINT_TOLERANCE {
                    self.waypoint_index = (self.waypoint_index + 1) % self.waypoints.len();
                }
            }
        }
    }
}

/// Another agent as seen by a pedestrian's avoidance model.
#[derive(Debug, Clone, PartialEq)]
pub struct Neighbor {
    pub id: String,
    pub position: Vec2,
    pub velocity: Vec2,
    pub radius: f64,
    /// Whether the neighbor shares avoidance effort (pedestrians) or not
    /// (robot, static geometry).
    pub reciprocal: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CrowdParams {
    pub sfm: SfmParams,
    pub orca: OrcaParams,
}

/// Advances every pedestrian one tick. Each model reads the previous
/// tick's snapshot, so the result is independent of list order.
/// `extra` carries non-pedestrian agents such as the robot.
pub fn step_crowd(peds: &[Pedestrian], world: &World, dt: f64, extra: &[Neighbor], params: &CrowdParams) -> Vec<Pedestrian> {
    let snapshot: Vec<Neighbor> = peds.iter().map(Pedestrian::as_neighbor).chain(extra.iter().cloned()).collect();
    peds.iter()
        .map(|p| {
            let others: Vec<Neighbor> = snapshot.iter().filter(|n| n.id != p.id).cloned().collect();
            let mut next = p.clone();
            match p.model {
                PedestrianModel::Scripted => {
                    if let Some(&pos) = p.trajectory.get(p.tick.min(p.trajectory.len().saturating_sub(1))) {
                        next.velocity = (pos - p.position) / dt;
                        next.position = pos;
                    }
                }
                PedestrianModel::SFM => {
                    let a = sfm_accel(p, &others, world, &params.sfm);
                    let mut v = p.velocity + a * dt;
                    let vmax = p.max_speed();
                    if v.norm() > vmax {
                        v = v.normalized() * vmax;
                    }
                    next.velocity = v;
                    next.position = p.position + v * dt;
                }
                PedestrianModel::ORCA => {
                    let mut obstacle_aware = others;
                    obstacle_aware.extend(static_neighbors(p.position, world, params.orca.neighbor_dist));
                    let v = orca_velocity(p, &obstacle_aware, dt, &params.orca);
                    next.velocity = v;
                    next.position = p.position + v * dt;
                }
            }
            next.tick = p.tick + 1;
            next.advance_waypoint();
            next
        })
        .collect()
}

/// Closest points of nearby static geometry as zero-radius, non-reciprocal agents.
fn static_neighbors(p: Vec2, world: &World, range: f64) -> Vec<Neighbor> {
    let mut pts: Vec<Vec2> = world.wall_segments().iter().map(|s| s.closest_point(p)).collect();
    pts.extend(world.polygons.iter().map(|poly| poly.closest_boundary_point(p)));
    pts.into_iter()
        .filter(|q| q.distance(p) < range)
        .enumerate()
        .map(|(i, q)| Neighbor { id: format!("#static{i}"), position: q, velocity: Vec2::ZERO, radius: 0.0, reciprocal: false })
        .collect()
}

/// What the robot perceives about a pedestrian on a given tick.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PedestrianState {
    pub id: String,
    pub position: Vec2,
    pub velocity: Vec2,
    pub vip: bool,
}

/// Exposes pedestrian states, optionally perturbed by zero-mean Gaussian
/// noise to stand in for detector error. `sigma = 0` gives ground truth.
pub fn observe<R: Rng + ?Sized>(peds: &[Pedestrian], sigma: f64, rng: &mut R) -> Vec<PedestrianState> {
    let noise = (sigma > 0.0).then(|| Normal::new(0.0, sigma).expect("positive sigma"));
    peds.iter()
        .map(|p| {
            let mut s = PedestrianState { id: p.id.clone(), position: p.position, velocity: p.velocity, vip: p.vip };
            if let Some(n) = &noise {
                s.position += Vec2::new(n.sample(rng), n.sample(rng));
                s.velocity += Vec2::new(n.sample(rng), n.sample(rng));
            }
            s
        })
        .collect()
}
