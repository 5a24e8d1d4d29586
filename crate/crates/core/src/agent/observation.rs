use crate::geometry::Vec2;
use crate::world::{CollisionReport, KinematicLimits, LaserScan, Pose};
use serde::{Deserialize, Serialize};

pub const SCAN_BINS: usize = 90;
pub const OBS_DIM: usize = SCAN_BINS + 5;
pub const ACT_DIM: usize = 2;
/// Goal distances are normalized by this and clipped to 1 (m).
pub const RHO_MAX: f64 = 10.0;

/// Knee of the logarithmic range encoding (m); resolution is finest below it.
pub const RANGE_KNEE: f64 = 0.5;

/// Maps a range in [0, max] monotonically onto [0, 1], logarithmically so
/// that near obstacles stay distinguishable.
pub fn encode_range(r: f64, max: f64) -> f64 {
    ((1.0 + r.max(0.0) / RANGE_KNEE).ln() / (1.0 + max / RANGE_KNEE).ln()).clamp(0.0, 1.0)
}

/// Min-pools the scan into [`SCAN_BINS`] sectors, each encoded by [`encode_range`].
pub fn pool_scan(scan: &LaserScan) -> [f64; SCAN_BINS] {
    let n = scan.ranges.len();
    let max = scan.config.max_range;
    let mut out = [1.0; SCAN_BINS];
    for (k, o) in out.iter_mut().enumerate() {
        let (a, b) = (k * n / SCAN_BINS, ((k + 1) * n / SCAN_BINS).max(k * n / SCAN_BINS + 1).min(n));
        let m = scan.ranges[a..b].iter().copied().fold(max, f64::min);
        *o = encode_range(m, max);
    }
    out
}

/// Scan sectors, target in polar form in the robot frame, and velocity.
pub fn build_observation(scan: &LaserScan, pose: &Pose, target: Vec2, v: f64, w: f64, limits: &KinematicLimits) -> Vec<f64> {
    let mut obs = Vec::with_capacity(OBS_DIM);
    obs.extend_from_slice(&pool_scan(scan));
    let local = pose.to_local(target);
    let rho = local.norm();
    let phi = local.y.atan2(local.x);
    obs.push((rho / RHO_MAX).min(1.0));
    obs.push(phi.sin());
    obs.push(phi.cos());
    obs.push((v / limits.v_max).clamp(-1.0, 1.0));
    obs.push((w / limits.w_max).clamp(-1.0, 1.0));
    obs
}

/// Maps a normalized action in [−1, 1]² to (v, w) within the limits.
pub fn action_to_command(u: &[f64], limits: &KinematicLimits) -> (f64, f64) {
    let v = limits.v_min + (u[0].clamp(-1.0, 1.0) + 1.0) * 0.5 * (limits.v_max - limits.v_min);
    let w = u[1].clamp(-1.0, 1.0) * limits.w_max;
    (v, w)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardParams {
    pub r_goal: f64,
    pub r_col: f64,
    pub w_d: f64,
    pub c_step: f64,
}

impl Default for RewardParams {
    fn default() -> Self {
        RewardParams { r_goal: 10.0, r_col: 10.0, w_d: 1.0, c_step: 0.01 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum StepEvent {
    Reached,
    Contact(CollisionReport),
    Step,
}

/// Returns the reward and whether the episode ends.
pub fn reward(prev_dist: f64, new_dist: f64, event: &StepEvent, p: &RewardParams) -> (f64, bool) {
    match event {
        StepEvent::Reached => (p.r_goal, true),
        StepEvent::Contact(c) if c.is_contact() => (-p.r_col, true),
        _ => (p.w_d * (prev_dist - new_dist) - p.c_step, false),
    }
}
