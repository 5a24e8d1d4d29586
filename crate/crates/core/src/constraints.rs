//! Semantic map, function library and the sketch compiler that turns user
//! strokes into virtual obstacles, keep-out zones, via points and goals.

use crate::geometry::{convex_decompose, convex_hull, resample_polyline, ConvexPolygon, GeometryError, Vec2};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::path::Path;

/// Max distance between first and last point of a closed stroke.
pub const CLOSING_TOLERANCE: f64 = 0.2;
/// Max deviation of the sampled inflation from a true circle.
pub const INFLATION_TOLERANCE: f64 = 0.01;
pub const MAX_ROUTE_POINTS: usize = 10;

#[derive(Debug, thiserror::Error)]
pub enum ConstraintError {
    #[error("sketch {index}: {reason}")]
    Sketch { index: usize, reason: String },
    #[error("unknown fixture '{0}'")]
    UnknownFixture(String),
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("invalid semantic map: {0}")]
    InvalidMap(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// A named, axis-aligned world feature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fixture {
    pub name: String,
    pub center: Vec2,
    /// x-extent in meters.
    pub length: f64,
    /// y-extent in meters.
    pub width: f64,
}

impl Fixture {
    pub fn new(name: impl Into<String>, center: Vec2, length: f64, width: f64) -> Self {
        Fixture { name: name.into(), center, length, width }
    }

    pub fn half_extents(&self) -> Vec2 {
        Vec2::new(self.length / 2.0, self.width / 2.0)
    }

    pub fn footprint(&self) -> ConvexPolygon {
        expand_location(self, 0.0).expect("validated fixture has a positive footprint")
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(try_from = "SemanticMapFile", into = "SemanticMapFile")]
pub struct SemanticMap {
    fixtures: Vec<Fixture>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SemanticMapFile {
    pub fixtures: Vec<Fixture>,
}

impl TryFrom<SemanticMapFile> for SemanticMap {
    type Error = ConstraintError;
    fn try_from(f: SemanticMapFile) -> Result<Self, Self::Error> {
        SemanticMap::new(f.fixtures)
    }
}

impl From<SemanticMap> for SemanticMapFile {
    fn from(m: SemanticMap) -> Self {
        SemanticMapFile { fixtures: m.fixtures }
    }
}

impl SemanticMap {
    pub fn new(fixtures: Vec<Fixture>) -> Result<Self, ConstraintError> {
        let mut seen = std::collections::HashSet::new();
        for f in &fixtures {
            if !(f.length > 0.0 && f.width > 0.0) || !f.center.is_finite() {
                return Err(ConstraintError::InvalidMap(format!("fixture '{}' needs positive length and width", f.name)));
            }
            if f.name.trim().is_empty() {
                return Err(ConstraintError::InvalidMap("fixture with empty name".into()));
            }
            if !seen.insert(f.name.to_lowercase()) {
                return Err(ConstraintError::InvalidMap(format!("duplicate fixture '{}'", f.name)));
            }
        }
        Ok(SemanticMap { fixtures })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConstraintError> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }

    pub fn fixtures(&self) -> &[Fixture] {
        &self.fixtures
    }

    pub fn get(&self, name: &str) -> Option<&Fixture> {
        let key = name.trim().to_lowercase();
        self.fixtures.iter().find(|f| f.name.to_lowercase() == key)
    }

    /// Plain-text listing handed to the language backend.
    pub fn describe(&self) -> String {
        self.fixtures
            .iter()
            .map(|f| {
                format!(
                    "- {}: center=({:.2}, {:.2}) length={:.2} width={:.2}",
                    f.name, f.center.x, f.center.y, f.length, f.width
                )
            })
            .collect::<Vec<_>>()
            .join("\n")
    }
}

/// Case-insensitive exact lookup.
pub fn resolve_fixture<'a>(map: &'a SemanticMap, name: &str) -> Result<&'a Fixture, ConstraintError> {
    map.get(name).ok_or_else(|| ConstraintError::UnknownFixture(name.to_string()))
}

/// Fixture footprint grown by a safety margin `r` on every side.
pub fn expand_location(fixture: &Fixture, r: f64) -> Result<ConvexPolygon, ConstraintError> {
    if !(r >= 0.0) || !r.is_finite() {
        return Err(ConstraintError::Argument(format!("margin must be non-negative, got {r}")));
    }
    let h = fixture.half_extents() + Vec2::new(r, r);
    Ok(ConvexPolygon::rectangle(fixture.center - h, fixture.center + h)?)
}

pub fn midpoint(a: &Fixture, b: &Fixture) -> Vec2 {
    (a.center + b.center) * 0.5
}

/// Axis-aligned rectangle spanning both fixtures' footprints.
pub fn region_between(a: &Fixture, b: &Fixture) -> ConvexPolygon {
    let (ha, hb) = (a.half_extents(), b.half_extents());
    let lo = Vec2::new((a.center.x - ha.x).min(b.center.x - hb.x), (a.center.y - ha.y).min(b.center.y - hb.y));
    let hi = Vec2::new((a.center.x + ha.x).max(b.center.x + hb.x), (a.center.y + ha.y).max(b.center.y + hb.y));
    ConvexPolygon::rectangle(lo, hi).expect("fixtures have positive extent")
}

/// Midpoint of the fixture side facing `from`, pushed out by `clearance`.
/// Used to ground "to X" and "near X" as reachable points.
pub fn approach_point(fixture: &Fixture, from: Vec2, clearance: f64) -> Vec2 {
    let h = fixture.half_extents();
    let d = from - fixture.center;
    if d.x.abs() * h.y >= d.y.abs() * h.x {
        let s = if d.x >= 0.0 { 1.0 } else { -1.0 };
        Vec2::new(fixture.center.x + s * (h.x + clearance), fixture.center.y)
    } else {
        let s = if d.y >= 0.0 { 1.0 } else { -1.0 };
        Vec2::new(fixture.center.x, fixture.center.y + s * (h.y + clearance))
    }
}

/// Signatures of the functions exposed to the language backend.
pub fn library_docs() -> &'static str {
    "expand_location(fixture: name, r: meters) -> polygon  # fixture footprint grown by r on every side\n\
     resolve_fixture(name) -> fixture  # case-insensitive lookup; unknown names must trigger a clarification\n\
     midpoint(a: name, b: name) -> point  # midpoint of two fixture centers\n\
     region_between(a: name, b: name) -> polygon  # rectangle spanning both footprints"
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ConstraintSource {
    SketchInput,
    ParsedInstruction,
}

/// One constraint polygon. `vertices` is the ring as given; `parts` its
/// convex decomposition used for raycasting and contact tests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RegionWire", into = "RegionWire")]
pub struct ConstraintRegion {
    pub id: u32,
    pub vertices: Vec<Vec2>,
    pub source: ConstraintSource,
    pub parts: Vec<ConvexPolygon>,
}

#[derive(Serialize, Deserialize)]
pub struct RegionWire {
    id: u32,
    vertices: Vec<Vec2>,
    source: ConstraintSource,
}

impl TryFrom<RegionWire> for ConstraintRegion {
    type Error = GeometryError;
    fn try_from(w: RegionWire) -> Result<Self, GeometryError> {
        ConstraintRegion::new(w.id, w.vertices, w.source)
    }
}

impl From<ConstraintRegion> for RegionWire {
    fn from(r: ConstraintRegion) -> Self {
        RegionWire { id: r.id, vertices: r.vertices, source: r.source }
    }
}

impl ConstraintRegion {
    pub fn new(id: u32, vertices: Vec<Vec2>, source: ConstraintSource) -> Result<Self, GeometryError> {
        let parts = convex_decompose(&vertices)?;
        Ok(ConstraintRegion { id, vertices, source, parts })
    }

    pub fn contains(&self, p: Vec2) -> bool {
        self.parts.iter().any(|part| part.contains(p))
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ConstraintSet {
    pub virtual_obstacles: Vec<ConstraintRegion>,
    pub keep_out_zones: Vec<ConstraintRegion>,
}

impl ConstraintSet {
    pub fn is_empty(&self) -> bool {
        self.virtual_obstacles.is_empty() && self.keep_out_zones.is_empty()
    }

    pub fn len(&self) -> usize {
        self.virtual_obstacles.len() + self.keep_out_zones.len()
    }

    fn next_id(&self) -> u32 {
        self.virtual_obstacles
            .iter()
            .chain(&self.keep_out_zones)
            .map(|r| r.id + 1)
            .max()
            .unwrap_or(0)
    }

    pub fn add_virtual_obstacle(&mut self, ring: Vec<Vec2>, source: ConstraintSource) -> Result<u32, GeometryError> {
        let id = self.next_id();
        self.virtual_obstacles.push(ConstraintRegion::new(id, ring, source)?);
        Ok(id)
    }

    pub fn add_keep_out_zone(&mut self, ring: Vec<Vec2>, source: ConstraintSource) -> Result<u32, GeometryError> {
        let id = self.next_id();
        self.keep_out_zones.push(ConstraintRegion::new(id, ring, source)?);
        Ok(id)
    }

    /// Appends another set, re-numbering its entries.
    pub fn extend(&mut self, other: &ConstraintSet) {
        for r in &other.virtual_obstacles {
            let id = self.next_id();
            self.virtual_obstacles.push(ConstraintRegion { id, ..r.clone() });
        }
        for r in &other.keep_out_zones {
            let id = self.next_id();
            self.keep_out_zones.push(ConstraintRegion { id, ..r.clone() });
        }
    }

    /// Drops entries from one source.
    pub fn retain_source(&mut self, keep: ConstraintSource) {
        self.virtual_obstacles.retain(|r| r.source == keep);
        self.keep_out_zones.retain(|r| r.source == keep);
    }

    pub fn all_parts(&self) -> impl Iterator<Item = &ConvexPolygon> {
        self.virtual_obstacles
            .iter()
            .chain(&self.keep_out_zones)
            .flat_map(|r| r.parts.iter())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SketchKind {
    ClosedRegion,
    RoutePath,
    SafetyOutline,
    GoalMark,
}

/// A vector stroke from the UI, in world meters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sketch {
    pub kind: SketchKind,
    pub points: Vec<Vec2>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub margin: Option<f64>,
}

impl Sketch {
    pub fn closed_region(points: Vec<Vec2>) -> Self {
        Sketch { kind: SketchKind::ClosedRegion, points, margin: None }
    }

    pub fn route(points: Vec<Vec2>) -> Self {
        Sketch { kind: SketchKind::RoutePath, points, margin: None }
    }

    pub fn safety_outline(points: Vec<Vec2>, margin: f64) -> Self {
        Sketch { kind: SketchKind::SafetyOutline, points, margin: Some(margin) }
    }

    pub fn goal(p: Vec2) -> Self {
        Sketch { kind: SketchKind::GoalMark, points: vec![p], margin: None }
    }

    /// Checks per-kind invariants. Returns a human-readable reason on failure.
    pub fn validate(&self) -> Result<(), String> {
        if self.points.iter().any(|p| !p.is_finite()) {
            return Err("non-finite coordinate".into());
        }
        if let Some(m) = self.margin {
            if !(m > 0.0) {
                return Err(format!("margin must be positive, got {m}"));
            }
        }
        match self.kind {
            SketchKind::ClosedRegion => {
                if self.points.len() < 3 {
                    return Err(format!("closed region needs at least 3 points, got {}", self.points.len()));
                }
                let gap = self.points[0].distance(self.points[self.points.len() - 1]);
                if gap > CLOSING_TOLERANCE {
                    return Err(format!("region not closed: ends {gap:.3} m apart (tolerance {CLOSING_TOLERANCE} m)"));
                }
                Ok(())
            }
            SketchKind::RoutePath if self.points.len() < 2 => Err("route needs at least 2 points".into()),
            SketchKind::GoalMark if self.points.len() != 1 => Err("goal mark needs exactly one point".into()),
            SketchKind::SafetyOutline => {
                if self.points.is_empty() {
                    return Err("safety outline needs at least one point".into());
                }
                if self.margin.is_none() {
                    return Err("safety outline needs a margin".into());
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }
}

/// Convex hull of circles of radius `margin` around every polyline point.
/// Circles are sampled circumscribed, so the hull always covers the true
/// inflation and overshoots it by at most [`INFLATION_TOLERANCE`].
pub fn inflate_polyline(points: &[Vec2], margin: f64) -> Result<ConvexPolygon, GeometryError> {
    let mut n = 8usize;
    while margin * (1.0 / (PI / n as f64).cos() - 1.0) > INFLATION_TOLERANCE {
        n *= 2;
    }
    let rad = margin / (PI / n as f64).cos();
    let samples: Vec<Vec2> = points
        .iter()
        .flat_map(|p| (0..n).map(move |k| *p + Vec2::from_angle(2.0 * PI * k as f64 / n as f64) * rad))
        .collect();
    ConvexPolygon::new(convex_hull(&samples))
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CompiledSketches {
    pub constraints: ConstraintSet,
    pub via_points: Vec<Vec2>,
    pub goal: Option<Vec2>,
}

pub fn compile_sketches(sketches: &[Sketch]) -> Result<CompiledSketches, ConstraintError> {
    let mut out = CompiledSketches::default();
    for (index, s) in sketches.iter().enumerate() {
        let bad = |reason: String| ConstraintError::Sketch { index, reason };
        s.validate().map_err(bad)?;
        match s.kind {
            SketchKind::ClosedRegion => {
                let mut ring = s.points.clone();
                ring.pop();
                if ring.len() < 3 {
                    return Err(bad("closed region collapses to fewer than 3 vertices".into()));
                }
                out.constraints
                    .add_virtual_obstacle(ring, ConstraintSource::SketchInput)
                    .map_err(|e| bad(e.to_string()))?;
            }
            SketchKind::SafetyOutline => {
                let margin = s.margin.unwrap_or_default();
                let zone = inflate_polyline(&s.points, margin).map_err(|e| bad(e.to_string()))?;
                out.constraints
                    .add_keep_out_zone(zone.into(), ConstraintSource::SketchInput)
                    .map_err(|e| bad(e.to_string()))?;
            }
            SketchKind::RoutePath => {
                out.via_points.extend(resample_polyline(&s.points, MAX_ROUTE_POINTS));
            }
            SketchKind::GoalMark => out.goal = Some(s.points[0]),
        }
    }
    Ok(out)
}
