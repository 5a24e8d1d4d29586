//! Randomized training environment: fixed furniture plus random squares,
//! thin walls, optional crowd and optional injected constraints.

use super::observation::{action_to_command, build_observation, reward, RewardParams, StepEvent};
use crate::constraints::{ConstraintSet, ConstraintSource};
use crate::crowd::{step_crowd, CrowdParams, Neighbor, Pedestrian, PedestrianModel};
use crate::geometry::{ConvexPolygon, Segment, Vec2};
use crate::world::{
    classify_contact, merge_scan, occlude_with_discs, raycast_scan, step_dynamics, Bounds, CollisionReport, KinematicLimits,
    LaserScan, Pose, RobotState, ScanConfig, World, DT, ROBOT_RADIUS,
};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnvConfig {
    pub bounds: Bounds,
    pub furniture: Vec<ConvexPolygon>,
    pub n_squares: usize,
    pub square_side: (f64, f64),
    pub n_segments: usize,
    pub segment_length: (f64, f64),
    pub n_pedestrians: usize,
    pub goal_distance: (f64, f64),
    /// Probability that an episode gets one virtual obstacle or keep-out zone.
    pub constraint_prob: f64,
    pub max_steps: usize,
    pub goal_radius: f64,
    pub scan: ScanConfig,
    pub limits: KinematicLimits,
    pub reward: RewardParams,
}

impl Default for EnvConfig {
    fn default() -> Self {
        let rect = |x0, y0, x1, y1| ConvexPolygon::rectangle(Vec2::new(x0, y0), Vec2::new(x1, y1)).expect("valid furniture");
        EnvConfig {
            bounds: Bounds::new(Vec2::ZERO, Vec2::new(10.0, 10.0)),
            furniture: vec![rect(0.0, 8.8, 2.0, 10.0), rect(8.6, 0.0, 10.0, 1.0)],
            n_squares: 2,
            square_side: (0.5, 1.0),
            n_segments: 4,
            segment_length: (1.0, 3.0),
            n_pedestrians: 4,
            goal_distance: (2.0, 8.0),
            constraint_prob: 0.5,
            max_steps: 400,
            goal_radius: 0.5,
            scan: ScanConfig::default(),
            limits: KinematicLimits::default(),
            reward: RewardParams::default(),
        }
    }
}

/// Routing grid resolution for reachability checks (m).
const GRID_RES: f64 = 0.1;
const PLACEMENT_ATTEMPTS: usize = 20;

/// Grid flood fill: can a robot disc travel from `start` to `goal`?
pub fn reachable(world: &World, constraints: &ConstraintSet, start: Vec2, goal: Vec2, radius: f64) -> bool {
    let b = world.bounds;
    let nx = (b.width() / GRID_RES).ceil() as usize;
    let ny = (b.height() / GRID_RES).ceil() as usize;
    let cell = |p: Vec2| -> (usize, usize) {
        let i = ((p.x - b.min.x) / GRID_RES).floor().clamp(0.0, (nx - 1) as f64) as usize;
        let j = ((p.y - b.min.y) / GRID_RES).floor().clamp(0.0, (ny - 1) as f64) as usize;
        (i, j)
    };
    let center = |i: usize, j: usize| Vec2::new(b.min.x + (i as f64 + 0.5) * GRID_RES, b.min.y + (j as f64 + 0.5) * GRID_RES);
    let parts: Vec<&ConvexPolygon> = constraints.all_parts().collect();
    let free = |p: Vec2| world.clearance(p) > radius && !parts.iter().any(|q| q.intersects_disc(p, radius));
    let (s, g) = (cell(start), cell(goal));
    let mut seen = vec![false; nx * ny];
    let mut queue = VecDeque::from([s]);
    seen[s.1 * nx + s.0] = true;
    while let Some((i, j)) = queue.pop_front() {
        if (i, j) == g {
            return true;
        }
        let neighbors = [(i.wrapping_sub(1), j), (i + 1, j), (i, j.wrapping_sub(1)), (i, j + 1)];
        for (a, c) in neighbors {
            if a < nx && c < ny && !seen[c * nx + a] {
                seen[c * nx + a] = true;
                if (a, c) == g || free(center(a, c)) {
                    queue.push_back((a, c));
                }
            }
        }
    }
    false
}

fn random_square<R: Rng + ?Sized>(center: Vec2, side: f64, rng: &mut R) -> ConvexPolygon {
    let theta = rng.random_range(0.0..std::f64::consts::FRAC_PI_2);
    let h = side / 2.0;
    let corners = [(-h, -h), (h, -h), (h, h), (-h, h)].map(|(x, y)| center + Vec2::new(x, y).rotate(theta));
    ConvexPolygon::new(corners.to_vec()).expect("rotated square is convex")
}

fn uniform_in<R: Rng + ?Sized>(b: &Bounds, margin: f64, rng: &mut R) -> Vec2 {
    Vec2::new(rng.random_range(b.min.x + margin..b.max.x - margin), rng.random_range(b.min.y + margin..b.max.y - margin))
}

/// How an episode ended.
#[derive(Debug, Clone, PartialEq)]
pub enum EpisodeEnd {
    Reached,
    Contact(CollisionReport),
    Timeout,
}

#[derive(Debug, Clone)]
pub struct EnvStep {
    pub obs: Vec<f64>,
    pub reward: f64,
    /// Terminal for bootstrapping purposes (reached or contact).
    pub terminal: bool,
    pub end: Option<EpisodeEnd>,
}

pub struct NavEnv {
    pub config: EnvConfig,
    pub world: World,
    pub constraints: ConstraintSet,
    pub pedestrians: Vec<Pedestrian>,
    pub robot: RobotState,
    pub goal: Vec2,
    pub steps: usize,
    crowd: CrowdParams,
}

impl NavEnv {
    pub fn new(config: EnvConfig) -> Self {
        let world = World::empty(config.bounds);
        NavEnv {
            world,
            constraints: ConstraintSet::default(),
            pedestrians: Vec::new(),
            robot: RobotState::at(Pose::new(1.0, 1.0, 0.0)),
            goal: Vec2::new(2.0, 2.0),
            steps: 0,
            crowd: CrowdParams::default(),
            config,
        }
    }

    fn random_world<R: Rng + ?Sized>(&self, rng: &mut R) -> World {
        let cfg = &self.config;
        let mut polys = cfg.furniture.clone();
        for _ in 0..cfg.n_squares {
            let side = rng.random_range(cfg.square_side.0..=cfg.square_side.1);
            polys.push(random_square(uniform_in(&cfg.bounds, 1.0, rng), side, rng));
        }
        let mut segments = Vec::with_capacity(cfg.n_segments);
        while segments.len() < cfg.n_segments {
            let a = uniform_in(&cfg.bounds, 0.2, rng);
            let len = rng.random_range(cfg.segment_length.0..=cfg.segment_length.1);
            let b = a + Vec2::from_angle(rng.random_range(-std::f64::consts::PI..std::f64::consts::PI)) * len;
            if cfg.bounds.contains(b) {
                segments.push(Segment::new(a, b));
            }
        }
        World::new(cfg.bounds, polys, segments).expect("random geometry lies inside bounds")
    }

    fn free_point<R: Rng + ?Sized>(&self, world: &World, constraints: &ConstraintSet, clearance: f64, rng: &mut R) -> Option<Vec2> {
        (0..200).map(|_| uniform_in(&self.config.bounds, clearance, rng)).find(|&p| {
            world.clearance(p) > clearance && !constraints.all_parts().any(|q| q.intersects_disc(p, clearance))
        })
    }

    fn random_constraints<R: Rng + ?Sized>(&self, start: Vec2, goal: Vec2, rng: &mut R) -> ConstraintSet {
        let mut set = ConstraintSet::default();
        if rng.random::<f64>() >= self.config.constraint_prob {
            return set;
        }
        let t = rng.random_range(0.35..0.65);
        let along = goal - start;
        let c = start + along * t + along.normalized().perp() * rng.random_range(-0.3..0.3);
        let side = rng.random_range(0.6..1.2);
        let ring: Vec<Vec2> = random_square(c, side, rng).into();
        let _ = if rng.random::<bool>() {
            set.add_virtual_obstacle(ring, ConstraintSource::SketchInput)
        } else {
            set.add_keep_out_zone(ring, ConstraintSource::SketchInput)
        };
        set
    }

    /// Builds a fresh episode. `None` when 20 placements in a row were unreachable.
    pub fn reset<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Option<Vec<f64>> {
        let clearance = ROBOT_RADIUS + 0.2;
        for _ in 0..PLACEMENT_ATTEMPTS {
            let world = self.random_world(rng);
            let empty = ConstraintSet::default();
            let Some(start) = self.free_point(&world, &empty, clearance, rng) else { continue };
            let Some(goal) = (0..200)
                .filter_map(|_| self.free_point(&world, &empty, clearance, rng))
                .find(|g| (self.config.goal_distance.0..=self.config.goal_distance.1).contains(&g.distance(start)))
            else {
                continue;
            };
            let constraints = self.random_constraints(start, goal, rng);
            let parts_clear = |p: Vec2| !constraints.all_parts().any(|q| q.intersects_disc(p, clearance));
            if !parts_clear(start) || !parts_clear(goal) || !reachable(&world, &constraints, start, goal, ROBOT_RADIUS) {
                continue;
            }
            let mut peds = Vec::with_capacity(self.config.n_pedestrians);
            for k in 0..self.config.n_pedestrians {
                let Some(p) = (0..50)
                    .filter_map(|_| self.free_point(&world, &constraints, 0.5, rng))
                    .find(|p| p.distance(start) > 1.5 && p.distance(goal) > 1.0)
                else {
                    continue;
                };
                let waypoints: Vec<Vec2> = (0..2).filter_map(|_| self.free_point(&world, &empty, 0.5, rng)).collect();
                let model = if k % 2 == 0 { PedestrianModel::SFM } else { PedestrianModel::ORCA };
                let mut ped = Pedestrian::new(format!("P{k}"), p, model).with_waypoints(waypoints);
                ped.v0 = rng.random_range(0.8..1.2);
                peds.push(ped);
            }
            let heading = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
            self.world = world;
            self.constraints = constraints;
            self.pedestrians = peds;
            self.robot = RobotState::at(Pose::new(start.x, start.y, heading));
            self.goal = goal;
            self.steps = 0;
            return Some(self.observe());
        }
        None
    }

    fn scan(&self) -> LaserScan {
        let cfg = &self.config.scan;
        let pose = &self.robot.pose;
        let Ok(mut scan) = raycast_scan(&self.world, pose, cfg) else {
            return LaserScan { config: *cfg, ranges: vec![1e-3; cfg.n_beams] };
        };
        let discs: Vec<_> = self.pedestrians.iter().map(Pedestrian::disc).collect();
        occlude_with_discs(&mut scan, pose, &discs);
        merge_scan(&scan, &self.constraints, pose, cfg).expect("scan built with the same config")
    }

    pub fn observe(&self) -> Vec<f64> {
        build_observation(&self.scan(), &self.robot.pose, self.goal, self.robot.v, self.robot.w, &self.config.limits)
    }

    /// Advances one tick with a normalized action.
    pub fn step(&mut self, u: &[f64]) -> EnvStep {
        let prev = self.robot.position().distance(self.goal);
        let cmd = action_to_command(u, &self.config.limits);
        self.robot = step_dynamics(&self.robot, cmd, DT, &self.config.limits);
        if !self.pedestrians.is_empty() {
            let me = Neighbor {
                id: "robot".into(),
                position: self.robot.position(),
                velocity: Vec2::from_angle(self.robot.pose.theta) * self.robot.v,
                radius: self.robot.radius,
                reciprocal: false,
            };
            self.pedestrians = step_crowd(&self.pedestrians, &self.world, DT, &[me], &self.crowd);
        }
        self.steps += 1;
        let discs: Vec<_> = self.pedestrians.iter().map(Pedestrian::disc).collect();
        let contact = classify_contact(&self.robot, &self.world, &self.constraints, &discs);
        let dist = self.robot.position().distance(self.goal);
        let event = if contact.is_contact() {
            StepEvent::Contact(contact.clone())
        } else if dist <= self.config.goal_radius {
            StepEvent::Reached
        } else {
            StepEvent::Step
        };
        let (r, terminal) = reward(prev, dist, &event, &self.config.reward);
        let end = match event {
            StepEvent::Reached => Some(EpisodeEnd::Reached),
            StepEvent::Contact(c) => Some(EpisodeEnd::Contact(c)),
            StepEvent::Step if self.steps >= self.config.max_steps => Some(EpisodeEnd::Timeout),
            StepEvent::Step => None,
        };
        EnvStep { obs: self.observe(), reward: r, terminal, end }
    }
}
