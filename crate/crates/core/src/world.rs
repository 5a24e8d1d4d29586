//! Deterministic 2D world: static geometry, unicycle kinematics, laser
//! raycasting, virtual-obstacle fusion and contact classification.

use crate::constraints::ConstraintSet;
use crate::geometry::{convex_decompose, normalize_angle, ConvexPolygon, GeometryError, Segment, Vec2};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::path::Path;

/// Simulation tick.
pub const DT: f64 = 0.1;
pub const ROBOT_RADIUS: f64 = 0.3;
pub const PEDESTRIAN_RADIUS: f64 = 0.3;

#[derive(Debug, thiserror::Error)]
pub enum WorldError {
    #[error("pose ({x:.3}, {y:.3}) is outside the world or inside an obstacle")]
    DegeneratePose { x: f64, y: f64 },
    #[error("scan configuration mismatch: {0}")]
    ConfigMismatch(String),
    #[error("invalid world: {0}")]
    Invalid(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

impl Pose {
    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        Pose { x, y, theta: normalize_angle(theta) }
    }

    pub fn position(&self) -> Vec2 {
        Vec2::new(self.x, self.y)
    }

    /// Expresses a world point in the robot frame.
    pub fn to_local(&self, p: Vec2) -> Vec2 {
        (p - self.position()).rotate(-self.theta)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KinematicLimits {
    pub v_min: f64,
    pub v_max: f64,
    pub w_max: f64,
}

impl Default for KinematicLimits {
    fn default() -> Self {
        KinematicLimits { v_min: 0.0, v_max: 1.0, w_max: 1.0 }
    }
}

impl KinematicLimits {
    pub fn clamp(&self, v: f64, w: f64) -> (f64, f64) {
        let v = if v.is_finite() { v.clamp(self.v_min, self.v_max) } else { 0.0 };
        let w = if w.is_finite() { w.clamp(-self.w_max, self.w_max) } else { 0.0 };
        (v, w)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RobotState {
    pub pose: Pose,
    pub v: f64,
    pub w: f64,
    pub radius: f64,
}

impl RobotState {
    pub fn at(pose: Pose) -> Self {
        RobotState { pose, v: 0.0, w: 0.0, radius: ROBOT_RADIUS }
    }

    pub fn position(&self) -> Vec2 {
        self.pose.position()
    }
}

/// Unicycle integration with saturating action clamp.
pub fn step_dynamics(state: &RobotState, action: (f64, f64), dt: f64, limits: &KinematicLimits) -> RobotState {
    let (v, w) = limits.clamp(action.0, action.1);
    let theta = normalize_angle(state.pose.theta + w * dt);
    let x = state.pose.x + v * theta.cos() * dt;
    let y = state.pose.y + v * theta.sin() * dt;
    RobotState { pose: Pose { x, y, theta }, v, w, radius: state.radius }
}

/// Axis-aligned world rectangle. Serialized as `[xmin, ymin, xmax, ymax]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 4]", into = "[f64; 4]")]
pub struct Bounds {
    pub min: Vec2,
    pub max: Vec2,
}

impl From<[f64; 4]> for Bounds {
    fn from(b: [f64; 4]) -> Self {
        Bounds { min: Vec2::new(b[0], b[1]), max: Vec2::new(b[2], b[3]) }
    }
}

impl From<Bounds> for [f64; 4] {
    fn from(b: Bounds) -> Self {
        [b.min.x, b.min.y, b.max.x, b.max.y]
    }
}

impl Bounds {
    pub fn new(min: Vec2, max: Vec2) -> Self {
        Bounds { min, max }
    }

    pub fn contains(&self, p: Vec2) -> bool {
        p.x >= self.min.x && p.x <= self.max.x && p.y >= self.min.y && p.y <= self.max.y
    }

    pub fn walls(&self) -> [Segment; 4] {
        let (a, c) = (self.min, self.max);
        let b = Vec2::new(c.x, a.y);
        let d = Vec2::new(a.x, c.y);
        [Segment::new(a, b), Segment::new(b, c), Segment::new(c, d), Segment::new(d, a)]
    }

    pub fn width(&self) -> f64 {
        self.max.x - self.min.x
    }

    pub fn height(&self) -> f64 {
        self.max.y - self.min.y
    }
}

/// Static world geometry. Polygons are stored as convex parts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "WorldFile", into = "WorldFile")]
pub struct World {
    pub bounds: Bounds,
    pub polygons: Vec<ConvexPolygon>,
    pub segments: Vec<Segment>,
}

/// On-disk form: `{bounds, polygons: [[[x,y]...]...], segments: [[x1,y1,x2,y2]...]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldFile {
    pub bounds: Bounds,
    #[serde(default)]
    pub polygons: Vec<Vec<Vec2>>,
    #[serde(default)]
    pub segments: Vec<[f64; 4]>,
}

impl TryFrom<WorldFile> for World {
    type Error = WorldError;
    fn try_from(f: WorldFile) -> Result<Self, WorldError> {
        let mut polygons = Vec::new();
        for ring in &f.polygons {
            polygons.extend(convex_decompose(ring)?);
        }
        let segments = f
            .segments
            .iter()
            .map(|s| Segment::new(Vec2::new(s[0], s[1]), Vec2::new(s[2], s[3])))
            .collect();
        World::new(f.bounds, polygons, segments)
    }
}

impl From<World> for WorldFile {
    fn from(w: World) -> Self {
        WorldFile {
            bounds: w.bounds,
            polygons: w.polygons.into_iter().map(Vec::from).collect(),
            segments: w.segments.iter().map(|s| [s.a.x, s.a.y, s.b.x, s.b.y]).collect(),
        }
    }
}

/// What a beam or a disc touched.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "type", content = "id")]
pub enum ContactId {
    Boundary,
    Polygon(usize),
    Segment(usize),
    Pedestrian(String),
    VirtualObstacle(u32),
    KeepOutZone(u32),
}

impl World {
    pub fn new(bounds: Bounds, polygons: Vec<ConvexPolygon>, segments: Vec<Segment>) -> Result<Self, WorldError> {
        if !(bounds.max.x > bounds.min.x && bounds.max.y > bounds.min.y) {
            return Err(WorldError::Invalid("bounds must have positive extent".into()));
        }
        let inside = |p: &Vec2| bounds.contains(*p);
        for (i, p) in polygons.iter().enumerate() {
            if !p.vertices().iter().all(inside) {
                return Err(WorldError::Invalid(format!("polygon {i} leaves the bounds")));
            }
        }
        for (i, s) in segments.iter().enumerate() {
            if !inside(&s.a) || !inside(&s.b) {
                return Err(WorldError::Invalid(format!("segment {i} leaves the bounds")));
            }
        }
        Ok(World { bounds, polygons, segments })
    }

    pub fn empty(bounds: Bounds) -> Self {
        World { bounds, polygons: Vec::new(), segments: Vec::new() }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, WorldError> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Returns a copy with extra convex polygons treated as physical geometry.
    pub fn with_polygons(&self, extra: impl IntoIterator<Item = ConvexPolygon>) -> World {
        let mut w = self.clone();
        w.polygons.extend(extra);
        w
    }

    pub fn is_free(&self, p: Vec2) -> bool {
        self.bounds.contains(p) && !self.polygons.iter().any(|poly| poly.contains_strict(p))
    }

    /// Distance along a unit ray to the nearest static geometry.
    pub fn ray_distance(&self, origin: Vec2, dir: Vec2) -> f64 {
        let mut best = f64::INFINITY;
        for wall in self.bounds.walls() {
            if let Some(t) = wall.ray_hit(origin, dir) {
                best = best.min(t);
            }
        }
        for poly in &self.polygons {
            if let Some(t) = poly.ray_hit(origin, dir) {
                best = best.min(t);
            }
        }
        for s in &self.segments {
            if let Some(t) = s.ray_hit(origin, dir) {
                best = best.min(t);
            }
        }
        best
    }

    /// Every static edge, for force and clearance computations.
    pub fn wall_segments(&self) -> Vec<Segment> {
        let mut out: Vec<Segment> = self.bounds.walls().to_vec();
        out.extend(self.segments.iter().copied());
        out
    }

    /// Minimum distance from `p` to any static geometry.
    pub fn clearance(&self, p: Vec2) -> f64 {
        let mut d = f64::INFINITY;
        for w in self.bounds.walls() {
            d = d.min(w.distance_to(p));
        }
        for s in &self.segments {
            d = d.min(s.distance_to(p));
        }
        for poly in &self.polygons {
            if poly.contains(p) {
                return 0.0;
            }
            d = d.min(poly.boundary_distance(p));
        }
        d
    }

    /// First static element overlapping a disc, if any.
    pub fn disc_contact(&self, center: Vec2, radius: f64) -> Option<ContactId> {
        if !self.bounds.contains(center) || self.bounds.walls().iter().any(|w| w.distance_to(center) < radius) {
            return Some(ContactId::Boundary);
        }
        if let Some(i) = self.polygons.iter().position(|p| p.intersects_disc(center, radius)) {
            return Some(ContactId::Polygon(i));
        }
        self.segments
            .iter()
            .position(|s| s.distance_to(center) < radius)
            .map(ContactId::Segment)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScanConfig {
    pub n_beams: usize,
    pub angle_min: f64,
    pub angle_max: f64,
    pub max_range: f64,
}

impl Default for ScanConfig {
    fn default() -> Self {
        ScanConfig { n_beams: 360, angle_min: -PI, angle_max: PI, max_range: 6.0 }
    }
}

impl ScanConfig {
    /// Beam angle relative to the robot heading; beams cover `[angle_min, angle_max)`.
    pub fn beam_angle(&self, i: usize) -> f64 {
        self.angle_min + (self.angle_max - self.angle_min) * i as f64 / self.n_beams as f64
    }

    fn validate(&self) -> Result<(), WorldError> {
        if self.n_beams == 0 || !(self.max_range > 0.0) || !(self.angle_max > self.angle_min) {
            return Err(WorldError::ConfigMismatch(format!("invalid scan config {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LaserScan {
    pub config: ScanConfig,
    pub ranges: Vec<f64>,
}

impl LaserScan {
    pub fn n_beams(&self) -> usize {
        self.ranges.len()
    }
}

fn cast_beams(pose: &Pose, cfg: &ScanConfig, mut dist: impl FnMut(Vec2, Vec2) -> f64) -> Vec<f64> {
    let origin = pose.position();
    (0..cfg.n_beams)
        .map(|i| {
            let dir = Vec2::from_angle(pose.theta + cfg.beam_angle(i));
            dist(origin, dir).min(cfg.max_range)
        })
        .collect()
}

/// Simulated 2D LIDAR against the static world.
pub fn raycast_scan(world: &World, pose: &Pose, cfg: &ScanConfig) -> Result<LaserScan, WorldError> {
    cfg.validate()?;
    if !world.is_free(pose.position()) {
        return Err(WorldError::DegeneratePose { x: pose.x, y: pose.y });
    }
    let ranges = cast_beams(pose, cfg, |o, d| world.ray_distance(o, d));
    Ok(LaserScan { config: *cfg, ranges })
}

/// First hit of a unit ray with a disc, for an origin outside the disc.
pub fn ray_disc_hit(origin: Vec2, dir: Vec2, center: Vec2, radius: f64) -> Option<f64> {
    let oc = origin - center;
    let b = oc.dot(dir);
    let cc = oc.norm_sq() - radius * radius;
    if cc <= 0.0 {
        return Some(0.0);
    }
    let disc = b * b - cc;
    if disc < 0.0 || b > 0.0 {
        return None;
    }
    Some(-b - disc.sqrt())
}

/// Lets pedestrians occlude beams of a physical scan.
pub fn occlude_with_discs(scan: &mut LaserScan, pose: &Pose, discs: &[Disc]) {
    if discs.is_empty() {
        return;
    }
    let origin = pose.position();
    let near: Vec<&Disc> = discs.iter().filter(|d| d.center.distance(origin) - d.radius < scan.config.max_range).collect();
    for (i, r) in scan.ranges.iter_mut().enumerate() {
        let dir = Vec2::from_angle(pose.theta + scan.config.beam_angle(i));
        for d in &near {
            if let Some(t) = ray_disc_hit(origin, dir, d.center, d.radius) {
                *r = r.min(t.max(1e-3));
            }
        }
    }
}

/// Adds zero-mean Gaussian range jitter, keeping ranges in `(0, max_range]`.
pub fn add_range_noise<R: Rng + ?Sized>(scan: &mut LaserScan, sigma: f64, rng: &mut R) {
    if sigma <= 0.0 {
        return;
    }
    let normal = Normal::new(0.0, sigma).expect("sigma is positive");
    let max = scan.config.max_range;
    for r in &mut scan.ranges {
        *r = (*r + normal.sample(rng)).clamp(1e-3, max);
    }
}

/// Distance along each beam to virtual obstacles and keep-out boundaries.
pub fn constraint_ray_distance(constraints: &ConstraintSet, origin: Vec2, dir: Vec2) -> f64 {
    constraints
        .all_parts()
        .filter_map(|p| p.ray_hit(origin, dir))
        .fold(f64::INFINITY, f64::min)
}

/// Fuses virtual geometry into a physical scan: each beam takes the nearer
/// of the physical return and the first virtual boundary along it.
pub fn merge_scan(
    physical: &LaserScan,
    constraints: &ConstraintSet,
    pose: &Pose,
    cfg: &ScanConfig,
) -> Result<LaserScan, WorldError> {
    if physical.config != *cfg {
        return Err(WorldError::ConfigMismatch(format!(
            "scan taken with {:?}, expected {:?}",
            physical.config, cfg
        )));
    }
    if physical.ranges.len() != cfg.n_beams {
        return Err(WorldError::ConfigMismatch(format!(
            "scan has {} ranges, config says {}",
            physical.ranges.len(),
            cfg.n_beams
        )));
    }
    if constraints.is_empty() {
        return Ok(physical.clone());
    }
    let virt = cast_beams(pose, cfg, |o, d| constraint_ray_distance(constraints, o, d));
    let ranges = physical.ranges.iter().zip(virt).map(|(p, v)| p.min(v)).collect();
    Ok(LaserScan { config: *cfg, ranges })
}

/// A moving disc (pedestrian) for collision checks.
#[derive(Debug, Clone, PartialEq)]
pub struct Disc {
    pub id: String,
    pub center: Vec2,
    pub radius: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ContactKind {
    None,
    PhysicalCollision,
    /// α: touching a potential (virtual) obstacle.
    VirtualContact,
    /// β: robot center inside a keep-out zone.
    SafetyZoneEntry,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "contact_id")]
pub enum CollisionReport {
    None,
    PhysicalCollision(ContactId),
    VirtualContact(u32),
    SafetyZoneEntry(u32),
}

impl CollisionReport {
    pub fn kind(&self) -> ContactKind {
        match self {
            CollisionReport::None => ContactKind::None,
            CollisionReport::PhysicalCollision(_) => ContactKind::PhysicalCollision,
            CollisionReport::VirtualContact(_) => ContactKind::VirtualContact,
            CollisionReport::SafetyZoneEntry(_) => ContactKind::SafetyZoneEntry,
        }
    }

    pub fn contact_id(&self) -> Option<ContactId> {
        match self {
            CollisionReport::None => None,
            CollisionReport::PhysicalCollision(id) => Some(id.clone()),
            CollisionReport::VirtualContact(id) => Some(ContactId::VirtualObstacle(*id)),
            CollisionReport::SafetyZoneEntry(id) => Some(ContactId::KeepOutZone(*id)),
        }
    }

    pub fn is_contact(&self) -> bool {
        !matches!(self, CollisionReport::None)
    }
}

/// Priority: physical > virtual obstacle > keep-out zone.
pub fn classify_contact(
    state: &RobotState,
    world: &World,
    constraints: &ConstraintSet,
    pedestrians: &[Disc],
) -> CollisionReport {
    let c = state.position();
    let r = state.radius;
    if let Some(id) = world.disc_contact(c, r) {
        return CollisionReport::PhysicalCollision(id);
    }
    if let Some(p) = pedestrians.iter().find(|p| p.center.distance(c) < p.radius + r) {
        return CollisionReport::PhysicalCollision(ContactId::Pedestrian(p.id.clone()));
    }
    if let Some(v) = constraints
        .virtual_obstacles
        .iter()
        .find(|v| v.parts.iter().any(|p| p.intersects_disc(c, r)))
    {
        return CollisionReport::VirtualContact(v.id);
    }
    if let Some(z) = constraints.keep_out_zones.iter().find(|z| z.contains(c)) {
        return CollisionReport::SafetyZoneEntry(z.id);
    }
    CollisionReport::None
}
