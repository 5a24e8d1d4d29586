//! Task-mode processing: picks the robot's current target from the task,
//! the robot state and the tracked pedestrians.

use crate::command::TaskKind;
use crate::crowd::PedestrianState;
use crate::geometry::Vec2;
use crate::world::RobotState;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TaskParams {
    pub d_near: f64,
    pub d_far: f64,
    pub via_radius: f64,
    pub goal_radius: f64,
}

impl Default for TaskParams {
    fn default() -> Self {
        TaskParams { d_near: 1.0, d_far: 2.5, via_radius: 0.8, goal_radius: 0.5 }
    }
}

/// A task with every fixture reference resolved to world coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundedTask {
    pub kind: TaskKind,
    pub goal: Option<Vec2>,
    pub vias: Vec<Vec2>,
    pub vip_id: Option<String>,
}

impl GroundedTask {
    pub fn point_to_point(goal: Vec2, vias: Vec<Vec2>) -> Self {
        GroundedTask { kind: TaskKind::PointToPoint, goal: Some(goal), vias, vip_id: None }
    }

    pub fn following(vip: impl Into<String>) -> Self {
        GroundedTask { kind: TaskKind::Following, goal: None, vias: Vec::new(), vip_id: Some(vip.into()) }
    }

    pub fn guiding(vip: impl Into<String>, goal: Vec2, vias: Vec<Vec2>) -> Self {
        GroundedTask { kind: TaskKind::Guiding, goal: Some(goal), vias, vip_id: Some(vip.into()) }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "phase", content = "via")]
pub enum Phase {
    ToVia(usize),
    ToVip,
    ToGoal,
    Done,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskProgress {
    pub phase: Phase,
    pub via_index: usize,
    /// `passed[k]` turns true once the robot has come within `via_radius` of via `k`.
    pub passed: Vec<bool>,
    pub params: TaskParams,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TaskFault {
    #[error("pedestrian '{0}' is not tracked")]
    MissingVip(String),
    #[error("task has no VIP")]
    NoVip,
    #[error("task has no goal")]
    NoGoal,
}

impl TaskProgress {
    pub fn start(task: &GroundedTask, params: TaskParams) -> Self {
        let phase = match task.kind {
            TaskKind::Following | TaskKind::Guiding => Phase::ToVip,
            TaskKind::PointToPoint if task.vias.is_empty() => Phase::ToGoal,
            TaskKind::PointToPoint => Phase::ToVia(0),
        };
        TaskProgress { phase, via_index: 0, passed: vec![false; task.vias.len()], params }
    }

    pub fn all_vias_passed(&self) -> bool {
        self.passed.iter().all(|&p| p)
    }

    fn route_phase(&self, task: &GroundedTask) -> Phase {
        if self.via_index < task.vias.len() {
            Phase::ToVia(self.via_index)
        } else {
            Phase::ToGoal
        }
    }
}

fn vip_position(task: &GroundedTask, peds: &[PedestrianState]) -> Result<Vec2, TaskFault> {
    let id = task.vip_id.as_deref().ok_or(TaskFault::NoVip)?;
    peds.iter()
        .find(|p| p.id.eq_ignore_ascii_case(id))
        .map(|p| p.position)
        .ok_or_else(|| TaskFault::MissingVip(id.to_string()))
}

/// One tick of the task-mode state machine. Pure: returns the target and
/// the successor progress without touching its inputs.
pub fn next_target(
    task: &GroundedTask,
    progress: &TaskProgress,
    robot: &RobotState,
    peds: &[PedestrianState],
) -> Result<(Vec2, TaskProgress), TaskFault> {
    let mut next = progress.clone();
    let params = progress.params;
    let here = robot.position();

    for (k, via) in task.vias.iter().enumerate() {
        if here.distance(*via) <= params.via_radius {
            next.passed[k] = true;
        }
    }

    // Walks the via sequence, returning the route target.
    let advance_route = |next: &mut TaskProgress| -> Result<Vec2, TaskFault> {
        let goal = task.goal.ok_or(TaskFault::NoGoal)?;
        if let Phase::ToVia(k) = next.phase {
            if here.distance(task.vias[k]) <= params.via_radius {
                next.via_index = k + 1;
                next.phase = next.route_phase(task);
            }
        }
        Ok(match next.phase {
            Phase::ToVia(k) => task.vias[k],
            _ => goal,
        })
    };

    let target = match task.kind {
        TaskKind::PointToPoint => match next.phase {
            Phase::Done => task.goal.ok_or(TaskFault::NoGoal)?,
            _ => {
                let t = advance_route(&mut next)?;
                if next.phase == Phase::ToGoal && here.distance(t) <= params.goal_radius {
                    next.phase = Phase::Done;
                }
                t
            }
        },
        TaskKind::Following => {
            next.phase = Phase::ToVip;
            vip_position(task, peds)?
        }
        TaskKind::Guiding => {
            let vip = vip_position(task, peds)?;
            let d_vip = here.distance(vip);
            match next.phase {
                Phase::Done => task.goal.ok_or(TaskFault::NoGoal)?,
                Phase::ToVip => {
                    if d_vip <= params.d_near {
                        next.phase = next.route_phase(task);
                        match next.phase {
                            Phase::ToVia(k) => task.vias[k],
                            _ => task.goal.ok_or(TaskFault::NoGoal)?,
                        }
                    } else {
                        vip
                    }
                }
                Phase::ToVia(_) | Phase::ToGoal => {
                    if d_vip > params.d_far {
                        next.phase = Phase::ToVip;
                        vip
                    } else {
                        let t = advance_route(&mut next)?;
                        if next.phase == Phase::ToGoal && here.distance(t) <= params.goal_radius {
                            next.phase = Phase::Done;
                        }
                        t
                    }
                }
            }
        }
    };
    Ok((target, next))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::Pose;

    fn robot(x: f64, y: f64) -> RobotState {
        RobotState::at(Pose::new(x, y, 0.0))
    }

    fn vip(x: f64, y: f64) -> Vec<PedestrianState> {
        vec![PedestrianState { id: "VIP05".into(), position: Vec2::new(x, y), velocity: Vec2::ZERO, vip: true }]
    }

    #[test]
    fn point_to_point_targets_goal_until_reached() {
        let task = GroundedTask::point_to_point(Vec2::new(5.0, 5.0), vec![]);
        let mut prog = TaskProgress::start(&task, TaskParams::default());
        for x in [0.0, 1.0, 2.0, 4.0] {
            let (t, p) = next_target(&task, &prog, &robot(x, x), &[]).unwrap();
            assert_eq!(t, Vec2::new(5.0, 5.0));
            assert_eq!(p.phase, Phase::ToGoal);
            prog = p;
        }
        let (_, p) = next_target(&task, &prog, &robot(4.8, 4.9), &[]).unwrap();
        assert_eq!(p.phase, Phase::Done);
    }

    #[test]
    fn vias_are_visited_in_order() {
        let task = GroundedTask::point_to_point(Vec2::new(8.0, 0.0), vec![Vec2::new(2.0, 0.0), Vec2::new(4.0, 0.0)]);
        let prog = TaskProgress::start(&task, TaskParams::default());
        let (t, prog) = next_target(&task, &prog, &robot(0.0, 0.0), &[]).unwrap();
        assert_eq!(t, Vec2::new(2.0, 0.0));
        let (t, prog) = next_target(&task, &prog, &robot(1.5, 0.0), &[]).unwrap();
        assert_eq!(t, Vec2::new(4.0, 0.0));
        assert_eq!(prog.passed, vec![true, false]);
        let (t, prog) = next_target(&task, &prog, &robot(3.5, 0.0), &[]).unwrap();
        assert_eq!(t, Vec2::new(8.0, 0.0));
        assert!(prog.all_vias_passed());
    }

    #[test]
    fn following_tracks_vip() {
        let task = GroundedTask::following("VIP05");
        let prog = TaskProgress::start(&task, TaskParams::default());
        let (t, p) = next_target(&task, &prog, &robot(0.0, 0.0), &vip(2.0, 1.0)).unwrap();
        assert_eq!(t, Vec2::new(2.0, 1.0));
        assert_eq!(p.phase, Phase::ToVip);
    }

    #[test]
    fn guiding_regresses_when_vip_falls_behind() {
        let task = GroundedTask::guiding("VIP05", Vec2::new(10.0, 0.0), vec![]);
        let prog = TaskProgress::start(&task, TaskParams::default());
        let (t, prog) = next_target(&task, &prog, &robot(0.0, 0.0), &vip(5.0, 0.0)).unwrap();
        assert_eq!((t, prog.phase), (Vec2::new(5.0, 0.0), Phase::ToVip));
        let (t, prog) = next_target(&task, &prog, &robot(4.1, 0.0), &vip(5.0, 0.0)).unwrap();
        assert_eq!((t, prog.phase), (Vec2::new(10.0, 0.0), Phase::ToGoal));
        let (t, prog) = next_target(&task, &prog, &robot(7.6, 0.0), &vip(5.0, 0.0)).unwrap();
        assert_eq!((t, prog.phase), (Vec2::new(5.0, 0.0), Phase::ToVip));
    }

    #[test]
    fn missing_vip_is_a_fault() {
        let task = GroundedTask::following("VIP09");
        let prog = TaskProgress::start(&task, TaskParams::default());
        assert_eq!(
            next_target(&task, &prog, &robot(0.0, 0.0), &vip(1.0, 1.0)),
            Err(TaskFault::MissingVip("VIP09".into()))
        );
    }
}
