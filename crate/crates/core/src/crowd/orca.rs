// Reciprocal half-plane construction and the incremental 2D linear program
// follow the structure of the RVO2 library (van den Berg et al.).

use super::{Neighbor, Pedestrian};
use crate::geometry::Vec2;
use serde::{Deserialize, Serialize};

const LP_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrcaParams {
    /// Collision horizon (s).
    pub time_horizon: f64,
    /// Neighbors beyond this distance are ignored (m).
    pub neighbor_dist: f64,
}

impl Default for OrcaParams {
    fn default() -> Self {
        OrcaParams { time_horizon: 2.0, neighbor_dist: 4.0 }
    }
}

/// Permitted velocities lie left of the directed line through `point`
/// along unit `direction`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HalfPlane {
    pub point: Vec2,
    pub direction: Vec2,
}

impl HalfPlane {
    /// Positive when `v` is outside the half-plane; the value is the distance.
    pub fn violation(&self, v: Vec2) -> f64 {
        self.direction.cross(self.point - v)
    }
}

/// ORCA half-planes induced on `p` by each neighbor within range.
pub fn orca_lines(p: &Pedestrian, others: &[Neighbor], dt: f64, params: &OrcaParams) -> Vec<HalfPlane> {
    let inv_horizon = 1.0 / params.time_horizon;
    others
        .iter()
        .filter(|o| o.position.distance(p.position) < params.neighbor_dist)
        .map(|o| {
            let rel_pos = o.position - p.position;
            let rel_vel = p.velocity - o.velocity;
            let dist_sq = rel_pos.norm_sq();
            let r = p.radius + o.radius;
            let r_sq = r * r;
            let (direction, u);
            if dist_sq > r_sq {
                let w = rel_vel - rel_pos * inv_horizon;
                let w_len_sq = w.norm_sq();
                let dot1 = w.dot(rel_pos);
                if dot1 < 0.0 && dot1 * dot1 > r_sq * w_len_sq {
                    // Closest to the truncation circle.
                    let w_len = w_len_sq.sqrt();
                    let unit_w = w / w_len;
                    direction = Vec2::new(unit_w.y, -unit_w.x);
                    u = unit_w * (r * inv_horizon - w_len);
                } else {
                    let leg = (dist_sq - r_sq).sqrt();
                    if rel_pos.cross(w) > 0.0 {
                        direction = Vec2::new(rel_pos.x * leg - rel_pos.y * r, rel_pos.x * r + rel_pos.y * leg) / dist_sq;
                    } else {
                        direction = -Vec2::new(rel_pos.x * leg + rel_pos.y * r, -rel_pos.x * r + rel_pos.y * leg) / dist_sq;
                    }
                    u = direction * rel_vel.dot(direction) - rel_vel;
                }
            } else {
                // Already overlapping: resolve within one step.
                let inv_dt = 1.0 / dt;
                let w = rel_vel - rel_pos * inv_dt;
                let w_len = w.norm();
                let unit_w = if w_len > 0.0 { w / w_len } else { Vec2::new(1.0, 0.0) };
                direction = Vec2::new(unit_w.y, -unit_w.x);
                u = unit_w * (r * inv_dt - w_len);
            }
            let share = if o.reciprocal { 0.5 } else { 1.0 };
            HalfPlane { point: p.velocity + u * share, direction }
        })
        .collect()
}

/// Velocity closest to `preferred` inside all half-planes and the speed
/// disc; when infeasible, the velocity minimizing the largest violation.
pub fn solve_velocity(lines: &[HalfPlane], max_speed: f64, preferred: Vec2) -> Vec2 {
    let mut result = Vec2::ZERO;
    let fail = linear_program2(lines, max_speed, preferred, false, &mut result);
    if fail < lines.len() {
        linear_program3(lines, fail, max_speed, &mut result);
    }
    result
}

pub fn orca_velocity(p: &Pedestrian, others: &[Neighbor], dt: f64, params: &OrcaParams) -> Vec2 {
    let lines = orca_lines(p, others, dt, params);
    solve_velocity(&lines, p.max_speed(), p.preferred_velocity())
}

fn linear_program1(
    lines: &[HalfPlane],
    line_no: usize,
    radius: f64,
    opt: Vec2,
    direction_opt: bool,
    result: &mut Vec2,
) -> bool {
    let line = lines[line_no];
    let dot = line.point.dot(line.direction);
    let disc = dot * dot + radius * radius - line.point.norm_sq();
    if disc < 0.0 {
        return false;
    }
    let sqrt_disc = disc.sqrt();
    let mut t_left = -dot - sqrt_disc;
    let mut t_right = -dot + sqrt_disc;

    for other in &lines[..line_no] {
        let denom = line.direction.cross(other.direction);
        let numer = other.direction.cross(line.point - other.point);
        if denom.abs() <= LP_EPS {
            if numer < 0.0 {
                return false;
            }
            continue;
        }
        let t = numer / denom;
        if denom >= 0.0 {
            t_right = t_right.min(t);
        } else {
            t_left = t_left.max(t);
        }
        if t_left > t_right {
            return false;
        }
    }

    *result = if direction_opt {
        if opt.dot(line.direction) > 0.0 {
            line.point + line.direction * t_right
        } else {
            line.point + line.direction * t_left
        }
    } else {
        let t = line.direction.dot(opt - line.point);
        line.point + line.direction * t.clamp(t_left, t_right)
    };
    true
}

fn linear_program2(lines: &[HalfPlane], radius: f64, opt: Vec2, direction_opt: bool, result: &mut Vec2) -> usize {
    *result = if direction_opt {
        opt * radius
    } else if opt.norm_sq() > radius * radius {
        opt.normalized() * radius
    } else {
        opt
    };
    for i in 0..lines.len() {
        if lines[i].violation(*result) > 0.0 {
            let prev = *result;
            if !linear_program1(lines, i, radius, opt, direction_opt, result) {
                *result = prev;
                return i;
            }
        }
    }
    lines.len()
}

fn linear_program3(lines: &[HalfPlane], begin: usize, radius: f64, result: &mut Vec2) {
    let mut distance = 0.0;
    for i in begin..lines.len() {
        if lines[i].violation(*result) > distance {
            let mut projected: Vec<HalfPlane> = Vec::with_capacity(i);
            for j in 0..i {
                let det = lines[i].direction.cross(lines[j].direction);
                let point = if det.abs() <= LP_EPS {
                    if lines[i].direction.dot(lines[j].direction) > 0.0 {
                        continue;
                    }
                    (lines[i].point + lines[j].point) * 0.5
                } else {
                    lines[i].point
                        + lines[i].direction * (lines[j].direction.cross(lines[i].point - lines[j].point) / det)
                };
                let direction = (lines[j].direction - lines[i].direction).normalized();
                projected.push(HalfPlane { point, direction });
            }
            let prev = *result;
            let dir = Vec2::new(-lines[i].direction.y, lines[i].direction.x);
            if linear_program2(&projected, radius, dir, true, result) < projected.len() {
                *result = prev;
            }
            distance = lines[i].violation(*result);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crowd::PedestrianModel;

    fn walker(id: &str, pos: Vec2, goal: Vec2, vel: Vec2) -> Pedestrian {
        let mut p = Pedestrian::new(id, pos, PedestrianModel::ORCA).with_waypoints(vec![goal]);
        p.velocity = vel;
        p
    }

    #[test]
    fn alone_keeps_preferred_velocity() {
        let p = walker("a", Vec2::ZERO, Vec2::new(3.0, 4.0), Vec2::ZERO);
        let v = orca_velocity(&p, &[], 0.1, &OrcaParams::default());
        assert_eq!(v, p.preferred_velocity());
        assert!((v - Vec2::new(0.6, 0.8)).norm() < 1e-12);
    }

    #[test]
    fn head_on_pair_dodges_reciprocally() {
        let a = walker("a", Vec2::new(-1.5, 0.05), Vec2::new(10.0, 0.05), Vec2::new(1.0, 0.0));
        let b = walker("b", Vec2::new(1.5, -0.05), Vec2::new(-10.0, -0.05), Vec2::new(-1.0, 0.0));
        let params = OrcaParams::default();
        let va = orca_velocity(&a, &[b.as_neighbor()], 0.1, &params);
        let vb = orca_velocity(&b, &[a.as_neighbor()], 0.1, &params);
        assert!(va.y.abs() > 1e-3);
        assert!(va.y.signum() != vb.y.signum());
        assert!((va.y + vb.y).abs() < 1e-9);
    }

    #[test]
    fn result_is_feasible_when_constraints_allow() {
        let a = walker("a", Vec2::ZERO, Vec2::new(5.0, 0.0), Vec2::new(1.0, 0.0));
        let b = walker("b", Vec2::new(1.5, 0.3), Vec2::new(1.5, 0.3), Vec2::ZERO);
        let lines = orca_lines(&a, &[b.as_neighbor()], 0.1, &OrcaParams::default());
        let v = solve_velocity(&lines, a.max_speed(), a.preferred_velocity());
        assert!(lines.iter().all(|l| l.violation(v) <= 1e-9));
        assert!(v.norm() <= a.max_speed() + 1e-12);
    }
}
