//! Planar geometry primitives shared by the simulator, the constraint
//! compiler and the crowd models.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::ops::{Add, AddAssign, Div, Mul, Neg, Sub, SubAssign};

/// Parameters closer than this are treated as parallel or coincident.
pub const EPS: f64 = 1e-12;

/// A 2D vector / point in meters. Serialized as `[x, y]`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl From<[f64; 2]> for Vec2 {
    fn from(p: [f64; 2]) -> Self {
        Vec2::new(p[0], p[1])
    }
}

impl From<Vec2> for [f64; 2] {
    fn from(v: Vec2) -> Self {
        [v.x, v.y]
    }
}

impl Vec2 {
    pub const ZERO: Vec2 = Vec2 { x: 0.0, y: 0.0 };

    pub const fn new(x: f64, y: f64) -> Self {
        Vec2 { x, y }
    }

    pub fn from_angle(theta: f64) -> Self {
        Vec2::new(theta.cos(), theta.sin())
    }

    pub fn dot(self, o: Vec2) -> f64 {
        self.x * o.x + self.y * o.y
    }

    /// 2D cross product (determinant of `[self, o]`).
    pub fn cross(self, o: Vec2) -> f64 {
        self.x * o.y - self.y * o.x
    }

    pub fn norm_sq(self) -> f64 {
        self.dot(self)
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn distance(self, o: Vec2) -> f64 {
        (self - o).norm()
    }

    /// Unit vector, or zero when the input has no length.
    pub fn normalized(self) -> Vec2 {
        let n = self.norm();
        if n > EPS {
            self / n
        } else {
            Vec2::ZERO
        }
    }

    /// Counter-clockwise perpendicular.
    pub fn perp(self) -> Vec2 {
        Vec2::new(-self.y, self.x)
    }

    pub fn angle(self) -> f64 {
        self.y.atan2(self.x)
    }

    pub fn rotate(self, theta: f64) -> Vec2 {
        let (s, c) = theta.sin_cos();
        Vec2::new(c * self.x - s * self.y, s * self.x + c * self.y)
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

impl Add for Vec2 {
    type Output = Vec2;
    fn add(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x + o.x, self.y + o.y)
    }
}
impl AddAssign for Vec2 {
    fn add_assign(&mut self, o: Vec2) {
        self.x += o.x;
        self.y += o.y;
    }
}
impl Sub for Vec2 {
    type Output = Vec2;
    fn sub(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x - o.x, self.y - o.y)
    }
}
impl SubAssign for Vec2 {
    fn sub_assign(&mut self, o: Vec2) {
        self.x -= o.x;
        self.y -= o.y;
    }
}
impl Mul<f64> for Vec2 {
    type Output = Vec2;
    fn mul(self, s: f64) -> Vec2 {
        Vec2::new(self.x * s, self.y * s)
    }
}
impl Mul<Vec2> for f64 {
    type Output = Vec2;
    fn mul(self, v: Vec2) -> Vec2 {
        v * self
    }
}
impl Div<f64> for Vec2 {
    type Output = Vec2;
    fn div(self, s: f64) -> Vec2 {
        Vec2::new(self.x / s, self.y / s)
    }
}
impl Neg for Vec2 {
    type Output = Vec2;
    fn neg(self) -> Vec2 {
        Vec2::new(-self.x, -self.y)
    }
}

/// Wraps an angle into `(-π, π]`.
pub fn normalize_angle(theta: f64) -> f64 {
    if theta > -PI && theta <= PI {
        return theta;
    }
    let mut t = theta.rem_euclid(2.0 * PI);
    if t > PI {
        t -= 2.0 * PI;
    }
    if t <= -PI {
        t += 2.0 * PI;
    }
    t
}

/// A closed line segment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment {
    pub a: Vec2,
    pub b: Vec2,
}

impl Segment {
    pub const fn new(a: Vec2, b: Vec2) -> Self {
        Segment { a, b }
    }

    pub fn length(&self) -> f64 {
        self.a.distance(self.b)
    }

    pub fn closest_point(&self, p: Vec2) -> Vec2 {
        let d = self.b - self.a;
        let len_sq = d.norm_sq();
        if len_sq <= EPS {
            return self.a;
        }
        let t = ((p - self.a).dot(d) / len_sq).clamp(0.0, 1.0);
        self.a + d * t
    }

    pub fn distance_to(&self, p: Vec2) -> f64 {
        self.closest_point(p).distance(p)
    }

    /// Distance along the ray `origin + t·dir` (`dir` unit length) to this
    /// segment, if the ray hits it at some `t > 0`.
    pub fn ray_hit(&self, origin: Vec2, dir: Vec2) -> Option<f64> {
        let e = self.b - self.a;
        let denom = dir.cross(e);
        if denom.abs() <= EPS {
            return None;
        }
        let w = self.a - origin;
        let t = w.cross(e) / denom;
        let s = w.cross(dir) / denom;
        if t > EPS && (-EPS..=1.0 + EPS).contains(&s) {
            Some(t)
        } else {
            None
        }
    }

    /// Proper or touching intersection between two segments.
    pub fn intersects(&self, o: &Segment) -> bool {
        let d1 = orient(o.a, o.b, self.a);
        let d2 = orient(o.a, o.b, self.b);
        let d3 = orient(self.a, self.b, o.a);
        let d4 = orient(self.a, self.b, o.b);
        if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
            && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
        {
            return true;
        }
        (d1 == 0.0 && on_segment(o.a, o.b, self.a))
            || (d2 == 0.0 && on_segment(o.a, o.b, self.b))
            || (d3 == 0.0 && on_segment(self.a, self.b, o.a))
            || (d4 == 0.0 && on_segment(self.a, self.b, o.b))
    }
}

fn orient(a: Vec2, b: Vec2, c: Vec2) -> f64 {
    (b - a).cross(c - a)
}

fn on_segment(a: Vec2, b: Vec2, p: Vec2) -> bool {
    p.x >= a.x.min(b.x) && p.x <= a.x.max(b.x) && p.y >= a.y.min(b.y) && p.y <= a.y.max(b.y)
}

/// Signed area of a closed vertex ring (positive when counter-clockwise).
pub fn signed_area(pts: &[Vec2]) -> f64 {
    let n = pts.len();
    (0..n)
        .map(|i| pts[i].cross(pts[(i + 1) % n]))
        .sum::<f64>()
        * 0.5
}

/// True when no two non-adjacent edges of the ring intersect.
pub fn is_simple(pts: &[Vec2]) -> bool {
    let n = pts.len();
    if n < 3 {
        return false;
    }
    let edges: Vec<Segment> = (0..n).map(|i| Segment::new(pts[i], pts[(i + 1) % n])).collect();
    for i in 0..n {
        for j in (i + 1)..n {
            let adjacent = j == i + 1 || (i == 0 && j == n - 1);
            if adjacent {
                continue;
            }
            if edges[i].intersects(&edges[j]) {
                return false;
            }
        }
    }
    true
}

/// A convex polygon with counter-clockwise vertices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec2>", into = "Vec<Vec2>")]
pub struct ConvexPolygon {
    vertices: Vec<Vec2>,
}

impl TryFrom<Vec<Vec2>> for ConvexPolygon {
    type Error = GeometryError;
    fn try_from(v: Vec<Vec2>) -> Result<Self, Self::Error> {
        ConvexPolygon::new(v)
    }
}

impl From<ConvexPolygon> for Vec<Vec2> {
    fn from(p: ConvexPolygon) -> Self {
        p.vertices
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GeometryError {
    #[error("polygon needs at least 3 vertices, got {0}")]
    TooFewVertices(usize),
    #[error("polygon is degenerate (zero area)")]
    Degenerate,
    #[error("polygon is not convex")]
    NotConvex,
    #[error("polygon edges self-intersect")]
    SelfIntersecting,
    #[error("non-finite coordinate")]
    NonFinite,
}

impl ConvexPolygon {
    /// Accepts either orientation; stores counter-clockwise.
    pub fn new(mut vertices: Vec<Vec2>) -> Result<Self, GeometryError> {
        if vertices.iter().any(|v| !v.is_finite()) {
            return Err(GeometryError::NonFinite);
        }
        dedup_ring(&mut vertices, 1e-9);
        if vertices.len() < 3 {
            return Err(GeometryError::TooFewVertices(vertices.len()));
        }
        let area = signed_area(&vertices);
        if area.abs() <= 1e-12 {
            return Err(GeometryError::Degenerate);
        }
        if area < 0.0 {
            vertices.reverse();
        }
        let n = vertices.len();
        for i in 0..n {
            let a = vertices[i];
            let b = vertices[(i + 1) % n];
            let c = vertices[(i + 2) % n];
            if orient(a, b, c) < -1e-9 {
                return Err(GeometryError::NotConvex);
            }
        }
        Ok(ConvexPolygon { vertices })
    }

    /// Axis-aligned rectangle `[min.x, max.x] × [min.y, max.y]`.
    pub fn rectangle(min: Vec2, max: Vec2) -> Result<Self, GeometryError> {
        ConvexPolygon::new(vec![
            min,
            Vec2::new(max.x, min.y),
            max,
            Vec2::new(min.x, max.y),
        ])
    }

    pub fn square(center: Vec2, side: f64) -> Result<Self, GeometryError> {
        let h = Vec2::new(side / 2.0, side / 2.0);
        ConvexPolygon::rectangle(center - h, center + h)
    }

    pub fn vertices(&self) -> &[Vec2] {
        &self.vertices
    }

    pub fn edges(&self) -> impl Iterator<Item = Segment> + '_ {
        let n = self.vertices.len();
        (0..n).map(move |i| Segment::new(self.vertices[i], self.vertices[(i + 1) % n]))
    }

    pub fn area(&self) -> f64 {
        signed_area(&self.vertices)
    }

    pub fn centroid(&self) -> Vec2 {
        let sum = self.vertices.iter().fold(Vec2::ZERO, |acc, v| acc + *v);
        sum / self.vertices.len() as f64
    }

    /// Closed containment (boundary counts as inside).
    pub fn contains(&self, p: Vec2) -> bool {
        self.edges().all(|e| orient(e.a, e.b, p) >= -1e-12)
    }

    /// Strict interior containment.
    pub fn contains_strict(&self, p: Vec2) -> bool {
        self.edges().all(|e| orient(e.a, e.b, p) > 1e-12)
    }

    pub fn boundary_distance(&self, p: Vec2) -> f64 {
        self.edges()
            .map(|e| e.distance_to(p))
            .fold(f64::INFINITY, f64::min)
    }

    pub fn closest_boundary_point(&self, p: Vec2) -> Vec2 {
        let mut best = self.vertices[0];
        let mut best_d = f64::INFINITY;
        for e in self.edges() {
            let q = e.closest_point(p);
            let d = q.distance(p);
            if d < best_d {
                best_d = d;
                best = q;
            }
        }
        best
    }

    /// Nearest ray hit on the boundary at `t > 0`.
    pub fn ray_hit(&self, origin: Vec2, dir: Vec2) -> Option<f64> {
        self.edges()
            .filter_map(|e| e.ray_hit(origin, dir))
            .fold(None, |acc: Option<f64>, t| Some(acc.map_or(t, |a| a.min(t))))
    }

    /// True when a disc of `radius` around `center` overlaps the polygon.
    pub fn intersects_disc(&self, center: Vec2, radius: f64) -> bool {
        self.contains(center) || self.boundary_distance(center) < radius
    }

    pub fn bounding_box(&self) -> (Vec2, Vec2) {
        let mut lo = Vec2::new(f64::INFINITY, f64::INFINITY);
        let mut hi = Vec2::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
        for v in &self.vertices {
            lo.x = lo.x.min(v.x);
            lo.y = lo.y.min(v.y);
            hi.x = hi.x.max(v.x);
            hi.y = hi.y.max(v.y);
        }
        (lo, hi)
    }
}

fn dedup_ring(pts: &mut Vec<Vec2>, tol: f64) {
    pts.dedup_by(|a, b| a.distance(*b) <= tol);
    while pts.len() > 1 && pts[0].distance(pts[pts.len() - 1]) <= tol {
        pts.pop();
    }
}

/// Convex hull (Andrew's monotone chain), counter-clockwise, collinear points dropped.
pub fn convex_hull(points: &[Vec2]) -> Vec<Vec2> {
    let mut pts: Vec<Vec2> = points.to_vec();
    pts.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let mut lower: Vec<Vec2> = Vec::new();
    for &p in &pts {
        while lower.len() >= 2 && orient(lower[lower.len() - 2], lower[lower.len() - 1], p) <= 0.0 {
            lower.pop();
        }
        lower.push(p);
    }
    let mut upper: Vec<Vec2> = Vec::new();
    for &p in pts.iter().rev() {
        while upper.len() >= 2 && orient(upper[upper.len() - 2], upper[upper.len() - 1], p) <= 0.0 {
            upper.pop();
        }
        upper.push(p);
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);
    lower
}

/// Splits a simple polygon (either orientation) into convex parts whose
/// union is the polygon: ear-clipping triangulation followed by
/// Hertel–Mehlhorn merging of triangles across removable diagonals.
pub fn convex_decompose(ring: &[Vec2]) -> Result<Vec<ConvexPolygon>, GeometryError> {
    let mut pts = ring.to_vec();
    dedup_ring(&mut pts, 1e-9);
    if pts.len() < 3 {
        return Err(GeometryError::TooFewVertices(pts.len()));
    }
    if !is_simple(&pts) {
        return Err(GeometryError::SelfIntersecting);
    }
    let area = signed_area(&pts);
    if area.abs() <= 1e-12 {
        return Err(GeometryError::Degenerate);
    }
    if area < 0.0 {
        pts.reverse();
    }
    if let Ok(p) = ConvexPolygon::new(pts.clone()) {
        return Ok(vec![p]);
    }

    // Ear clipping over vertex indices.
    let mut idx: Vec<usize> = (0..pts.len()).collect();
    let mut tris: Vec<[usize; 3]> = Vec::new();
    let mut guard = 0;
    while idx.len() > 3 {
        let n = idx.len();
        let mut clipped = false;
        for i in 0..n {
            let (ia, ib, ic) = (idx[(i + n - 1) % n], idx[i], idx[(i + 1) % n]);
            let (a, b, c) = (pts[ia], pts[ib], pts[ic]);
            if orient(a, b, c) <= 1e-14 {
                continue;
            }
            let blocked = idx.iter().any(|&j| {
                j != ia && j != ib && j != ic && point_in_triangle(pts[j], a, b, c)
            });
            if blocked {
                continue;
            }
            tris.push([ia, ib, ic]);
            idx.remove(i);
            clipped = true;
            break;
        }
        if !clipped {
            // Only collinear runs remain; drop the flattest vertex.
            let n = idx.len();
            let flat = (0..n)
                .min_by(|&i, &j| {
                    let f = |k: usize| {
                        orient(pts[idx[(k + n - 1) % n]], pts[idx[k]], pts[idx[(k + 1) % n]]).abs()
                    };
                    f(i).total_cmp(&f(j))
                })
                .unwrap_or(0);
            idx.remove(flat);
        }
        guard += 1;
        if guard > 10 * pts.len() * pts.len() {
            return Err(GeometryError::Degenerate);
        }
    }
    if orient(pts[idx[0]], pts[idx[1]], pts[idx[2]]) > 1e-14 {
        tris.push([idx[0], idx[1], idx[2]]);
    }

    // Hertel–Mehlhorn: greedily merge neighbouring pieces while convex.
    let mut pieces: Vec<Vec<usize>> = tris.into_iter().map(|t| t.to_vec()).collect();
    loop {
        let mut merged_any = false;
        'outer: for i in 0..pieces.len() {
            for j in (i + 1)..pieces.len() {
                if let Some(m) = merge_pieces(&pieces[i], &pieces[j]) {
                    let ring: Vec<Vec2> = m.iter().map(|&k| pts[k]).collect();
                    if is_convex_ccw(&ring) {
                        pieces[i] = m;
                        pieces.remove(j);
                        merged_any = true;
                        break 'outer;
                    }
                }
            }
        }
        if !merged_any {
            break;
        }
    }
    pieces
        .into_iter()
        .map(|p| ConvexPolygon::new(p.into_iter().map(|k| pts[k]).collect()))
        .collect()
}

fn point_in_triangle(p: Vec2, a: Vec2, b: Vec2, c: Vec2) -> bool {
    orient(a, b, p) >= 0.0 && orient(b, c, p) >= 0.0 && orient(c, a, p) >= 0.0
}

fn is_convex_ccw(ring: &[Vec2]) -> bool {
    let n = ring.len();
    (0..n).all(|i| orient(ring[i], ring[(i + 1) % n], ring[(i + 2) % n]) >= -1e-12)
}

/// Merges two CCW index rings sharing exactly one edge (as `u→v` in one and
/// `v→u` in the other).
fn merge_pieces(p: &[usize], q: &[usize]) -> Option<Vec<usize>> {
    let np = p.len();
    let nq = q.len();
    for i in 0..np {
        let (u, v) = (p[i], p[(i + 1) % np]);
        for j in 0..nq {
            if q[j] == v && q[(j + 1) % nq] == u {
                // Walk p from v around to u, then q's vertices strictly between u and v.
                let mut out = Vec::with_capacity(np + nq - 2);
                for k in 0..np {
                    out.push(p[(i + 1 + k) % np]);
                }
                // out = v ... u ; now append q from after u up to before v
                for k in 2..nq {
                    out.push(q[(j + k) % nq]);
                }
                return Some(out);
            }
        }
    }
    None
}

/// Evenly spaced samples along a polyline by arc length (endpoints kept).
pub fn resample_polyline(points: &[Vec2], n: usize) -> Vec<Vec2> {
    if points.len() <= n || n < 2 {
        return points.to_vec();
    }
    let mut cum = vec![0.0];
    for w in points.windows(2) {
        let last = *cum.last().unwrap_or(&0.0);
        cum.push(last + w[0].distance(w[1]));
    }
    let total = *cum.last().unwrap_or(&0.0);
    if total <= EPS {
        return vec![points[0]];
    }
    let mut out = Vec::with_capacity(n);
    let mut seg = 0;
    for k in 0..n {
        let s = total * k as f64 / (n - 1) as f64;
        while seg + 1 < cum.len() - 1 && cum[seg + 1] < s {
            seg += 1;
        }
        let len = cum[seg + 1] - cum[seg];
        let t = if len > EPS { (s - cum[seg]) / len } else { 0.0 };
        out.push(points[seg] + (points[seg + 1] - points[seg]) * t.clamp(0.0, 1.0));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn angle_wraps_into_half_open_interval() {
        assert_eq!(normalize_angle(PI), PI);
        assert!((normalize_angle(-PI) - PI).abs() < 1e-15);
        assert!((normalize_angle(3.0 * PI / 2.0) + PI / 2.0).abs() < 1e-12);
        assert!((normalize_angle(7.0) - (7.0 - 2.0 * PI)).abs() < 1e-12);
    }

    #[test]
    fn ray_hits_segment_ahead_only() {
        let s = Segment::new(Vec2::new(2.0, -1.0), Vec2::new(2.0, 1.0));
        assert_eq!(s.ray_hit(Vec2::ZERO, Vec2::new(1.0, 0.0)), Some(2.0));
        assert_eq!(s.ray_hit(Vec2::ZERO, Vec2::new(-1.0, 0.0)), None);
    }

    #[test]
    fn l_shape_decomposes_into_convex_parts_covering_it() {
        let l = vec![
            Vec2::new(0.0, 0.0),
            Vec2::new(2.0, 0.0),
            Vec2::new(2.0, 1.0),
            Vec2::new(1.0, 1.0),
            Vec2::new(1.0, 2.0),
            Vec2::new(0.0, 2.0),
        ];
        let parts = convex_decompose(&l).unwrap();
        assert!(parts.len() >= 2);
        let total: f64 = parts.iter().map(|p| p.area()).sum();
        assert!((total - 3.0).abs() < 1e-12);
        assert!(parts.iter().any(|p| p.contains(Vec2::new(1.5, 0.5))));
        assert!(parts.iter().all(|p| !p.contains_strict(Vec2::new(1.5, 1.5))));
    }

    #[test]
    fn bowtie_is_rejected() {
        let bow = vec![
            Vec2::new(0.0, 0.0),
            Vec2::new(1.0, 1.0),
            Vec2::new(1.0, 0.0),
            Vec2::new(0.0, 1.0),
        ];
        assert_eq!(convex_decompose(&bow), Err(GeometryError::SelfIntersecting));
    }

    #[test]
    fn hull_drops_interior_points() {
        let pts = [
            Vec2::new(0.0, 0.0),
            Vec2::new(1.0, 0.0),
            Vec2::new(0.5, 0.2),
            Vec2::new(1.0, 1.0),
            Vec2::new(0.0, 1.0),
        ];
        assert_eq!(convex_hull(&pts).len(), 4);
    }

    #[test]
    fn resample_keeps_endpoints() {
        let pts: Vec<Vec2> = (0..25).map(|i| Vec2::new(i as f64, 0.0)).collect();
        let r = resample_polyline(&pts, 10);
        assert_eq!(r.len(), 10);
        assert_eq!(r[0], pts[0]);
        assert!((r[9].x - 24.0).abs() < 1e-12);
    }
}
