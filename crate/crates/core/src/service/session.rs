//! One live session: a loaded scenario, the tick loop and message handling.
//! All simulation state is owned here; callers feed messages and ticks in
//! order and forward the returned outbound messages.

use super::metrics::{EpisodeRecord, Method, Outcome};
use super::protocol::{ControlMode, Envelope, ErrorCode, Inbound, Outbound, RobotFrame, ScenarioSource, StateFrame};
use super::scenario::{Scenario, TestCase};
use crate::agent::nn::Mlp;
use crate::agent::observation::{action_to_command, build_observation};
use crate::agent::sac::sample_action;
use crate::command::{answer_clarification, parse_instruction, Clarification, ParseResult, Place, TaskKind, TaskSpec};
use crate::constraints::{approach_point, compile_sketches, CompiledSketches, ConstraintSet, SemanticMap, Sketch};
use crate::crowd::{observe, step_crowd, CrowdParams, Neighbor, Pedestrian, PedestrianState};
use crate::geometry::Vec2;
use crate::taskmode::{next_target, GroundedTask, Phase, TaskParams, TaskProgress};
use crate::world::{
    classify_contact, merge_scan, occlude_with_discs, raycast_scan, step_dynamics, CollisionReport,
    KinematicLimits, LaserScan, Pose, RobotState, ScanConfig, DT,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::PathBuf;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SessionConfig {
    /// Feed the merged scan to the controller; `false` is the physical-only baseline.
    pub use_constraints: bool,
    /// Overrides the scenario's step limit.
    pub max_steps: Option<usize>,
    pub scan: ScanConfig,
    pub limits: KinematicLimits,
    pub task: TaskParams,
    pub crowd: CrowdParams,
    /// Detector noise on the pedestrian states seen by task-mode processing.
    pub pedestrian_noise: f64,
    /// Distance kept from a fixture when it is used as a goal or via point.
    pub approach_clearance: f64,
    pub seed: u64,
}

impl Default for SessionConfig {
    fn default() -> Self {
        SessionConfig {
            use_constraints: true,
            max_steps: None,
            scan: ScanConfig::default(),
            limits: KinematicLimits::default(),
            task: TaskParams::default(),
            crowd: CrowdParams::default(),
            pedestrian_noise: 0.0,
            approach_clearance: 0.5,
            seed: 0,
        }
    }
}

struct ActiveTask {
    spec: TaskSpec,
    grounded: GroundedTask,
    progress: TaskProgress,
}

pub struct Session {
    pub id: String,
    pub config: SessionConfig,
    scenario: Option<Scenario>,
    /// Base directory for scenario paths received over the wire.
    pub scenario_dir: PathBuf,
    policy: Option<Mlp<f32>>,
    robot: RobotState,
    pedestrians: Vec<Pedestrian>,
    sketches: Vec<Sketch>,
    compiled: CompiledSketches,
    parsed: ConstraintSet,
    constraints: ConstraintSet,
    revision: u64,
    scripted_goal: Option<Place>,
    scripted_vias: Vec<Place>,
    task: Option<ActiveTask>,
    target: Option<Vec2>,
    faulted: bool,
    pending: Option<(String, Clarification)>,
    control: ControlMode,
    manual: (f64, f64),
    running: bool,
    tick: u64,
    episode: u64,
    test_name: String,
    trajectory: Vec<Vec2>,
    path_length: f64,
    contact: CollisionReport,
    scan: LaserScan,
    rng: ChaCha8Rng,
    records: Vec<EpisodeRecord>,
}

fn place_point(map: &SemanticMap, place: &Place, from: Vec2, clearance: f64) -> Result<Vec2, String> {
    match place {
        Place::Point(p) => Ok(*p),
        Place::Fixture(name) => map
            .get(name)
            .map(|f| approach_point(f, from, clearance))
            .ok_or_else(|| format!("unknown fixture '{name}'")),
    }
}

impl Session {
    pub fn new(id: impl Into<String>, config: SessionConfig, policy: Option<Mlp<f32>>) -> Self {
        let rng = ChaCha8Rng::seed_from_u64(config.seed);
        let scan = LaserScan { config: config.scan, ranges: vec![config.scan.max_range; config.scan.n_beams] };
        Session {
            id: id.into(),
            scenario: None,
            scenario_dir: PathBuf::from("."),
            policy,
            robot: RobotState::at(Pose::new(0.0, 0.0, 0.0)),
            pedestrians: Vec::new(),
            sketches: Vec::new(),
            compiled: CompiledSketches::default(),
            parsed: ConstraintSet::default(),
            constraints: ConstraintSet::default(),
            revision: 0,
            scripted_goal: None,
            scripted_vias: Vec::new(),
            task: None,
            target: None,
            faulted: false,
            pending: None,
            control: ControlMode::Policy,
            manual: (0.0, 0.0),
            running: false,
            tick: 0,
            episode: 0,
            test_name: String::new(),
            trajectory: Vec::new(),
            path_length: 0.0,
            contact: CollisionReport::None,
            scan,
            rng,
            records: Vec::new(),
            config,
        }
    }

    pub fn with_scenario(mut self, scenario: Scenario) -> Self {
        self.install(scenario);
        self
    }

    pub fn scenario(&self) -> Option<&Scenario> {
        self.scenario.as_ref()
    }

    pub fn is_running(&self) -> bool {
        self.running
    }

    pub fn records(&self) -> &[EpisodeRecord] {
        &self.records
    }

    pub fn robot(&self) -> &RobotState {
        &self.robot
    }

    pub fn constraints(&self) -> &ConstraintSet {
        &self.constraints
    }

    pub fn task(&self) -> Option<&GroundedTask> {
        self.task.as_ref().map(|t| &t.grounded)
    }

    pub fn method(&self) -> Method {
        match (self.control, self.config.use_constraints) {
            (ControlMode::Manual, _) => Method::Manual,
            (_, true) => Method::Fused,
            (_, false) => Method::PhysicalOnly,
        }
    }

    fn max_steps(&self) -> u64 {
        self.config.max_steps.or(self.scenario.as_ref().map(|s| s.max_steps)).unwrap_or(400) as u64
    }

    fn install(&mut self, scenario: Scenario) {
        self.scenario = Some(scenario);
        self.reset_world(None);
        self.clear_setup();
    }

    fn clear_setup(&mut self) {
        self.sketches.clear();
        self.compiled = CompiledSketches::default();
        self.parsed = ConstraintSet::default();
        self.scripted_goal = None;
        self.scripted_vias.clear();
        self.task = None;
        self.target = None;
        self.pending = None;
        self.rebuild_constraints();
    }

    /// Robot, pedestrians and episode counters back to the scenario start.
    fn reset_world(&mut self, start: Option<Pose>) {
        let Some(s) = &self.scenario else { return };
        self.robot = RobotState::at(start.unwrap_or(s.robot_start));
        self.pedestrians = s.pedestrians.iter().map(Pedestrian::from).collect();
        self.running = false;
        self.begin_episode_counters();
    }

    fn begin_episode_counters(&mut self) {
        self.tick = 0;
        self.trajectory = vec![self.robot.position()];
        self.path_length = 0.0;
        self.contact = CollisionReport::None;
        self.faulted = false;
        self.refresh_scan();
    }

    fn rebuild_constraints(&mut self) {
        let mut all = self.compiled.constraints.clone();
        all.extend(&self.parsed);
        self.constraints = all;
        self.revision += 1;
        self.refresh_scan();
    }

    fn discs(&self) -> Vec<crate::world::Disc> {
        self.pedestrians.iter().map(Pedestrian::disc).collect()
    }

    /// The scan the controller sees. The two policy modes differ only here.
    fn sense(&self) -> LaserScan {
        let cfg = &self.config.scan;
        let pose = &self.robot.pose;
        let world = match &self.scenario {
            Some(s) => &s.world,
            None => return LaserScan { config: *cfg, ranges: vec![cfg.max_range; cfg.n_beams] },
        };
        let Ok(mut scan) = raycast_scan(world, pose, cfg) else {
            return LaserScan { config: *cfg, ranges: vec![1e-3; cfg.n_beams] };
        };
        occlude_with_discs(&mut scan, pose, &self.discs());
        if self.config.use_constraints {
            scan = merge_scan(&scan, &self.constraints, pose, cfg).expect("scan built with the session config");
        }
        scan
    }

    fn refresh_scan(&mut self) {
        self.scan = self.sense();
    }

    fn observed_pedestrians(&mut self) -> Vec<PedestrianState> {
        observe(&self.pedestrians, self.config.pedestrian_noise, &mut self.rng)
    }

    fn known_pedestrians(&self) -> Vec<String> {
        self.pedestrians.iter().map(|p| p.id.clone()).collect()
    }

    fn ground(&self, spec: &TaskSpec) -> Result<GroundedTask, String> {
        let map = self.scenario.as_ref().map(|s| s.map.clone()).unwrap_or_default();
        let clearance = self.config.approach_clearance;
        let mut from = self.robot.position();
        let mut vias = Vec::new();
        let via_places = if spec.via.is_empty() && spec.task != TaskKind::Following { &self.scripted_vias } else { &spec.via };
        for v in via_places {
            let p = place_point(&map, v, from, clearance)?;
            vias.push(p);
            from = p;
        }
        vias.extend(self.compiled.via_points.iter().copied());
        if let Some(&last) = vias.last() {
            from = last;
        }
        let goal = match (&spec.goal, &self.scripted_goal, self.compiled.goal) {
            (Some(g), _, _) => Some(place_point(&map, g, from, clearance)?),
            (None, _, Some(g)) => Some(g),
            (None, Some(g), None) => Some(place_point(&map, g, from, clearance)?),
            (None, None, None) => None,
        };
        let task = match spec.task {
            TaskKind::PointToPoint => GroundedTask::point_to_point(goal.ok_or("no goal")?, vias),
            TaskKind::Following => GroundedTask::following(spec.vip_id.clone().ok_or("no VIP")?),
            TaskKind::Guiding => GroundedTask::guiding(spec.vip_id.clone().ok_or("no VIP")?, goal.ok_or("no goal")?, vias),
        };
        Ok(task)
    }

    fn assign(&mut self, spec: TaskSpec) -> Vec<Outbound> {
        match self.ground(&spec) {
            Ok(grounded) => {
                let progress = TaskProgress::start(&grounded, self.config.task);
                let msg = Outbound::TaskAssigned { task: spec.clone(), goal: grounded.goal, vias: grounded.vias.clone() };
                self.task = Some(ActiveTask { spec, grounded, progress });
                self.faulted = false;
                let mut out = vec![msg];
                out.extend(self.update_target());
                out
            }
            Err(e) => vec![Outbound::error(ErrorCode::TaskFault, e)],
        }
    }

    /// Task with no instruction: built from a sketched goal or the test's goal.
    fn scripted_task(&self) -> Option<TaskSpec> {
        (self.compiled.goal.is_some() || self.scripted_goal.is_some())
            .then(|| TaskSpec { task: TaskKind::PointToPoint, goal: None, via: Vec::new(), vip_id: None })
    }

    fn overlay(&self) -> Outbound {
        Outbound::ConstraintOverlay {
            revision: self.revision,
            constraints: self.constraints.clone(),
            via_points: self.compiled.via_points.clone(),
            goal: self.compiled.goal,
        }
    }

    fn apply_parse(&mut self, text: &str, result: ParseResult) -> Vec<Outbound> {
        match result {
            ParseResult::NeedsClarification(c) => {
                let msg = Outbound::ClarificationRequest { question: c.question.clone(), slot: c.slot.clone() };
                self.pending = Some((text.to_string(), c));
                vec![msg]
            }
            ParseResult::Parsed { task, constraints } => {
                self.pending = None;
                let mut out = Vec::new();
                if !constraints.is_empty() {
                    self.parsed.extend(&constraints);
                    self.rebuild_constraints();
                    out.push(self.overlay());
                }
                if let Some(spec) = task {
                    out.extend(self.assign(spec));
                }
                out
            }
        }
    }

    fn command(&mut self, text: &str) -> Vec<Outbound> {
        let Some(s) = &self.scenario else { return vec![Outbound::error(ErrorCode::NoScenario, "no scenario loaded")] };
        let result = parse_instruction(text, &s.map, &self.known_pedestrians());
        self.apply_parse(text, result)
    }

    fn set_sketches(&mut self, sketches: Vec<Sketch>) -> Result<(), String> {
        let compiled = compile_sketches(&sketches).map_err(|e| e.to_string())?;
        self.sketches = sketches;
        self.compiled = compiled;
        self.rebuild_constraints();
        Ok(())
    }

    fn update_target(&mut self) -> Vec<Outbound> {
        let peds = self.observed_pedestrians();
        let Some(t) = &mut self.task else {
            self.target = None;
            return Vec::new();
        };
        match next_target(&t.grounded, &t.progress, &self.robot, &peds) {
            Ok((g, p)) => {
                self.target = Some(g);
                t.progress = p;
                self.faulted = false;
                Vec::new()
            }
            Err(f) => {
                self.target = None;
                let first = !self.faulted;
                self.faulted = true;
                if first {
                    vec![Outbound::error(ErrorCode::TaskFault, f.to_string())]
                } else {
                    Vec::new()
                }
            }
        }
    }

    /// Starts scripted test `k` from `start` (defaults to the test's or the scenario's start).
    pub fn start_test(&mut self, k: usize, start: Option<Pose>) -> Vec<Outbound> {
        let Some(s) = &self.scenario else { return vec![Outbound::error(ErrorCode::NoScenario, "no scenario loaded")] };
        let Some(test) = s.tests.get(k).cloned() else {
            return vec![Outbound::error(ErrorCode::Malformed, format!("scenario has no test {k}"))];
        };
        let start = start.or(test.start);
        self.reset_world(start);
        self.clear_setup();
        self.prepare_test(&test)
            .into_iter()
            .chain(self.start_episode(test.name.clone()))
            .collect()
    }

    fn prepare_test(&mut self, test: &TestCase) -> Vec<Outbound> {
        let mut out = Vec::new();
        if let Err(e) = self.set_sketches(test.sketches.clone()) {
            out.push(Outbound::error(ErrorCode::InvalidSketch, e));
        }
        self.scripted_goal = test.goal.clone();
        self.scripted_vias = test.expected_vias.clone();
        out.push(self.overlay());
        match &test.instruction {
            Some(text) => out.extend(self.command(text)),
            None => {
                if let Some(spec) = self.scripted_task() {
                    out.extend(self.assign(spec));
                }
            }
        }
        out
    }

    fn start_episode(&mut self, test_name: String) -> Vec<Outbound> {
        self.test_name = test_name;
        self.episode += 1;
        self.begin_episode_counters();
        if let Some(t) = &mut self.task {
            t.progress = TaskProgress::start(&t.grounded, self.config.task);
        }
        let mut out = self.update_target();
        self.running = true;
        out.push(self.frame_message());
        out
    }

    fn action(&mut self) -> (f64, f64) {
        match self.control {
            ControlMode::Idle => (0.0, 0.0),
            ControlMode::Manual => self.config.limits.clamp(self.manual.0, self.manual.1),
            ControlMode::Policy => {
                let (Some(actor), Some(target)) = (&self.policy, self.target) else { return (0.0, 0.0) };
                let obs = build_observation(&self.scan, &self.robot.pose, target, self.robot.v, self.robot.w, &self.config.limits);
                let obs: Vec<f32> = obs.iter().map(|&x| x as f32).collect();
                match sample_action(actor, &obs, true, &mut self.rng) {
                    Ok((u, _)) => {
                        let u: Vec<f64> = u.iter().map(|&x| x as f64).collect();
                        action_to_command(&u, &self.config.limits)
                    }
                    Err(_) => (0.0, 0.0),
                }
            }
        }
    }

    /// Advances one tick while an episode runs: control, dynamics, crowd,
    /// target, contacts, scan. Returns the frame and any episode end.
    pub fn tick(&mut self) -> Vec<Outbound> {
        if !self.running {
            return Vec::new();
        }
        let Some(scenario) = &self.scenario else { return Vec::new() };
        let world = scenario.world.clone();
        let cmd = self.action();
        let before = self.robot.position();
        self.robot = step_dynamics(&self.robot, cmd, DT, &self.config.limits);
        if !self.pedestrians.is_empty() {
            let me = Neighbor {
                id: "robot".into(),
                position: self.robot.position(),
                velocity: Vec2::from_angle(self.robot.pose.theta) * self.robot.v,
                radius: self.robot.radius,
                reciprocal: false,
            };
            self.pedestrians = step_crowd(&self.pedestrians, &world, DT, &[me], &self.config.crowd);
        }
        self.tick += 1;
        let here = self.robot.position();
        self.path_length += here.distance(before);
        self.trajectory.push(here);
        let mut out = self.update_target();
        self.contact = classify_contact(&self.robot, &world, &self.constraints, &self.discs());
        self.refresh_scan();
        out.push(self.frame_message());
        if let Some(outcome) = self.episode_outcome() {
            out.push(self.end_episode(outcome));
        }
        out
    }

    fn episode_outcome(&self) -> Option<Outcome> {
        match self.contact {
            CollisionReport::PhysicalCollision(_) => return Some(Outcome::Collision),
            CollisionReport::VirtualContact(_) => return Some(Outcome::Alpha),
            CollisionReport::SafetyZoneEntry(_) => return Some(Outcome::Beta),
            CollisionReport::None => {}
        }
        if let Some(t) = &self.task {
            if t.progress.phase == Phase::Done {
                return Some(if t.progress.all_vias_passed() { Outcome::Success } else { Outcome::Gamma });
            }
        }
        if self.tick >= self.max_steps() {
            let following = self.task.as_ref().is_some_and(|t| t.grounded.kind == TaskKind::Following);
            return Some(if following && !self.faulted { Outcome::Success } else { Outcome::Timeout });
        }
        None
    }

    fn end_episode(&mut self, outcome: Outcome) -> Outbound {
        self.running = false;
        let record = EpisodeRecord {
            scenario: self.scenario.as_ref().map(|s| s.name.clone()).unwrap_or_default(),
            test: self.test_name.clone(),
            episode: self.episode,
            method: self.method(),
            outcome,
            ticks: self.tick,
            time_s: self.tick as f64 * DT,
            path_length: self.path_length,
            vias_passed: self.task.as_ref().map(|t| t.progress.passed.clone()).unwrap_or_default(),
            trajectory: self.trajectory.clone(),
        };
        self.records.push(record.clone());
        Outbound::EpisodeEnded { record }
    }

    pub fn frame(&self) -> StateFrame {
        StateFrame {
            tick: self.tick,
            time: self.tick as f64 * DT,
            running: self.running,
            control: self.control,
            robot: RobotFrame {
                x: self.robot.pose.x,
                y: self.robot.pose.y,
                theta: self.robot.pose.theta,
                v: self.robot.v,
                w: self.robot.w,
            },
            pedestrians: self
                .pedestrians
                .iter()
                .map(|p| PedestrianState { id: p.id.clone(), position: p.position, velocity: p.velocity, vip: p.vip })
                .collect(),
            scan: self.scan.ranges.clone(),
            target: self.target,
            phase: self.task.as_ref().map(|t| t.progress.phase),
            contact: self.contact.kind(),
            constraint_revision: self.revision,
        }
    }

    fn frame_message(&self) -> Outbound {
        Outbound::StateFrame(Box::new(self.frame()))
    }

    fn scene(&self) -> Option<Outbound> {
        self.scenario.as_ref().map(|s| Outbound::Scene {
            name: s.name.clone(),
            world: s.world.clone(),
            map: s.map.clone(),
            tests: s.test_names(),
        })
    }

    fn load(&mut self, source: &ScenarioSource) -> Result<(), String> {
        let scenario = match source {
            ScenarioSource::Path { path } => {
                let p = self.scenario_dir.join(path);
                Scenario::load(&p).map_err(|e| e.to_string())?
            }
            ScenarioSource::Inline(file) => Scenario::from_file(file, &self.scenario_dir).map_err(|e| e.to_string())?,
        };
        self.install(scenario);
        Ok(())
    }

    /// Handles one inbound message. The acknowledgement always comes first,
    /// ahead of any frame that reflects the message.
    pub fn handle(&mut self, env: &Envelope<Inbound>) -> Vec<Outbound> {
        if env.session.as_deref().is_some_and(|s| s != self.id) {
            return vec![Outbound::error(ErrorCode::UnknownSession, format!("unknown session '{}'", env.session.as_deref().unwrap_or_default()))];
        }
        let mut out = vec![Outbound::Ack { of: env.body.kind().to_string(), seq: env.seq }];
        let needs_scenario = !matches!(env.body, Inbound::LoadScenario { .. } | Inbound::SetControl { .. } | Inbound::ManualInput { .. });
        if needs_scenario && self.scenario.is_none() {
            out.push(Outbound::error(ErrorCode::NoScenario, "no scenario loaded"));
            return out;
        }
        match &env.body {
            Inbound::LoadScenario { scenario } => match self.load(scenario) {
                Ok(()) => {
                    out.extend(self.scene());
                    out.push(self.overlay());
                    out.push(self.frame_message());
                }
                Err(e) => out.push(Outbound::error(ErrorCode::InvalidScenario, e)),
            },
            Inbound::AddSketch { sketch } => {
                let mut next = self.sketches.clone();
                next.push(sketch.clone());
                match self.set_sketches(next) {
                    Ok(()) => {
                        out.push(self.overlay());
                        if self.compiled.goal.is_some() && self.task.as_ref().is_none_or(|t| t.spec.goal.is_none()) {
                            let spec = self.task.as_ref().map(|t| t.spec.clone()).or_else(|| self.scripted_task());
                            if let Some(spec) = spec {
                                out.extend(self.assign(spec));
                            }
                        }
                    }
                    Err(e) => out.push(Outbound::error(ErrorCode::InvalidSketch, e)),
                }
            }
            Inbound::ClearSketches => {
                self.set_sketches(Vec::new()).expect("empty sketch list compiles");
                out.push(self.overlay());
            }
            Inbound::Command { text } => out.extend(self.command(text)),
            Inbound::ResolvedCommand { text, result } => out.extend(self.apply_parse(text, result.clone())),
            Inbound::ClarificationAnswer { text } => match self.pending.take() {
                Some((original, c)) => {
                    let map = self.scenario.as_ref().map(|s| s.map.clone()).unwrap_or_default();
                    let result = answer_clarification(&original, &c, text, &map, &self.known_pedestrians());
                    let merged = match &result {
                        ParseResult::NeedsClarification(_) => format!("{original} ({text})"),
                        _ => original,
                    };
                    out.extend(self.apply_parse(&merged, result));
                }
                None => out.extend(self.command(text)),
            },
            Inbound::SetControl { mode } => {
                self.control = *mode;
                self.manual = (0.0, 0.0);
            }
            Inbound::ManualInput { linear, angular } => self.manual = self.config.limits.clamp(*linear, *angular),
            Inbound::Start { test: Some(k) } => out.extend(self.start_test(*k, None)),
            Inbound::Start { test: None } => {
                let name = self.test_name.clone();
                out.extend(self.start_episode(if name.is_empty() { "interactive".into() } else { name }));
            }
            Inbound::Reset => {
                self.reset_world(None);
                self.clear_setup();
                out.push(self.overlay());
                out.push(self.frame_message());
            }
            Inbound::ResyncRequest => {
                out.extend(self.scene());
                out.push(self.overlay());
                if let Some(t) = &self.task {
                    out.push(Outbound::TaskAssigned { task: t.spec.clone(), goal: t.grounded.goal, vias: t.grounded.vias.clone() });
                }
                if let Some((_, c)) = &self.pending {
                    out.push(Outbound::ClarificationRequest { question: c.question.clone(), slot: c.slot.clone() });
                }
                out.push(self.frame_message());
            }
        }
        out
    }

    /// Runs the current episode to its end without pacing.
    pub fn run_to_end(&mut self) -> Option<EpisodeRecord> {
        while self.running {
            for m in self.tick() {
                if let Outbound::EpisodeEnded { record } = m {
                    return Some(record);
                }
            }
        }
        None
    }

    /// Uniformly jittered start pose for test `k`.
    pub fn jittered_start<R: Rng + ?Sized>(&self, k: usize, rng: &mut R) -> Option<Pose> {
        let s = self.scenario.as_ref()?;
        let t = s.tests.get(k)?;
        let base = t.start.unwrap_or(s.robot_start);
        if t.start_jitter <= 0.0 {
            return Some(base);
        }
        for _ in 0..100 {
            let j = t.start_jitter;
            let p = Pose::new(base.x + rng.random_range(-j..=j), base.y + rng.random_range(-j..=j), base.theta);
            if s.world.clearance(p.position()) > self.robot.radius + 0.05 {
                return Some(p);
            }
        }
        Some(base)
    }
}
