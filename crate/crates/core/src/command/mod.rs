//! Instruction understanding: turns a sentence into a task plus constraint
//! additions, or asks a clarifying question. The deterministic grammar is
//! the default backend; an HTTP language-model backend sits behind the same
//! result type.

mod grammar;
mod llm;

pub use grammar::{answer_clarification, parse_instruction, render_canonical};
pub use llm::{build_prompt, BackendError, HttpTransport, LlmBackend, LlmTransport, ENV_ENDPOINT, ENV_KEY, ENV_MODEL};

use crate::constraints::{expand_location, resolve_fixture, ConstraintSet, ConstraintSource, SemanticMap};
use crate::geometry::Vec2;
use serde::{Deserialize, Serialize};

/// Inflation applied to hazards when the user gives no distance.
pub const DEFAULT_HAZARD_RADIUS: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TaskKind {
    PointToPoint,
    Following,
    Guiding,
}

/// A destination: a fixture by name or a raw point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Place {
    Fixture(String),
    Point(Vec2),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub task: TaskKind,
    #[serde(default)]
    pub goal: Option<Place>,
    #[serde(default)]
    pub via: Vec<Place>,
    #[serde(default)]
    pub vip_id: Option<String>,
}

impl TaskSpec {
    pub fn validate(&self) -> Result<(), String> {
        match self.task {
            TaskKind::PointToPoint if self.goal.is_none() => Err("point-to-point needs a goal".into()),
            TaskKind::Guiding if self.goal.is_none() => Err("guiding needs a goal".into()),
            TaskKind::Following | TaskKind::Guiding if self.vip_id.is_none() => Err("task needs a VIP".into()),
            _ => Ok(()),
        }
    }
}

/// What a clarification is asking for; used to merge the user's answer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "slot", content = "word")]
pub enum ClarificationSlot {
    Task,
    Goal,
    Vip,
    Fixture(String),
    HazardLocation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Clarification {
    pub question: String,
    pub slot: ClarificationSlot,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "outcome")]
pub enum ParseResult {
    /// `task` is `None` when the instruction only adds constraints.
    Parsed { task: Option<TaskSpec>, constraints: ConstraintSet },
    NeedsClarification(Clarification),
}

impl ParseResult {
    pub fn clarify(question: impl Into<String>, slot: ClarificationSlot) -> Self {
        ParseResult::NeedsClarification(Clarification { question: question.into(), slot })
    }

    pub fn task(&self) -> Option<&TaskSpec> {
        match self {
            ParseResult::Parsed { task, .. } => task.as_ref(),
            ParseResult::NeedsClarification(_) => None,
        }
    }

    pub fn constraints(&self) -> Option<&ConstraintSet> {
        match self {
            ParseResult::Parsed { constraints, .. } => Some(constraints),
            ParseResult::NeedsClarification(_) => None,
        }
    }

    pub fn question(&self) -> Option<&str> {
        match self {
            ParseResult::NeedsClarification(c) => Some(&c.question),
            ParseResult::Parsed { .. } => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HazardKind {
    /// Ground hazard the laser cannot see (spill, wet floor): virtual obstacle.
    VirtualObstacle,
    /// Area to keep away from: keep-out zone.
    KeepOut,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hazard {
    #[serde(rename = "type")]
    pub kind: HazardKind,
    pub fixture: String,
    #[serde(default)]
    pub r: Option<f64>,
}

/// Structured reading of an instruction shared by both backends before
/// validation against the map and the tracked pedestrians.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Interpretation {
    pub task: Option<TaskKind>,
    #[serde(default)]
    pub goal: Option<Place>,
    #[serde(default)]
    pub via: Vec<Place>,
    #[serde(default)]
    pub vip: Option<String>,
    #[serde(default)]
    pub constraints: Vec<Hazard>,
}

impl Interpretation {
    /// Checks the reading against the world and builds the final result.
    /// Never guesses: every gap becomes a question.
    pub fn finalize(self, map: &SemanticMap, known_pedestrians: &[String]) -> ParseResult {
        let mut constraints = ConstraintSet::default();
        for h in &self.constraints {
            let fixture = match resolve_fixture(map, &h.fixture) {
                Ok(f) => f,
                Err(_) => return unknown_fixture(&h.fixture),
            };
            let r = h.r.unwrap_or(DEFAULT_HAZARD_RADIUS);
            let poly = match expand_location(fixture, r) {
                Ok(p) => p,
                Err(e) => return ParseResult::clarify(format!("{e}. How far should I stay away?"), ClarificationSlot::HazardLocation),
            };
            let added = match h.kind {
                HazardKind::VirtualObstacle => constraints.add_virtual_obstacle(poly.into(), ConstraintSource::ParsedInstruction),
                HazardKind::KeepOut => constraints.add_keep_out_zone(poly.into(), ConstraintSource::ParsedInstruction),
            };
            if added.is_err() {
                return ParseResult::clarify("I could not place that hazard. Where exactly is it?", ClarificationSlot::HazardLocation);
            }
        }

        let canon = |p: Place| -> Result<Place, ParseResult> {
            match p {
                Place::Fixture(name) => resolve_fixture(map, &name)
                    .map(|f| Place::Fixture(f.name.clone()))
                    .map_err(|_| unknown_fixture(&name)),
                pt => Ok(pt),
            }
        };

        let Some(kind) = self.task else {
            if self.goal.is_none() && self.via.is_empty() && self.vip.is_none() && !constraints.is_empty() {
                return ParseResult::Parsed { task: None, constraints };
            }
            return ParseResult::clarify(
                "What would you like me to do? I can go to a place, follow someone, or guide someone.",
                ClarificationSlot::Task,
            );
        };

        let goal = match self.goal.map(canon).transpose() {
            Ok(g) => g,
            Err(q) => return q,
        };
        let mut via = Vec::with_capacity(self.via.len());
        for v in self.via {
            match canon(v) {
                Ok(p) => via.push(p),
                Err(q) => return q,
            }
        }
        let vip_id = match self.vip {
            Some(v) => match known_pedestrians.iter().find(|k| k.eq_ignore_ascii_case(&v)) {
                Some(k) => Some(k.clone()),
                None => {
                    return ParseResult::clarify(
                        format!("I can't see a pedestrian called {v}. Which pedestrian do you mean?"),
                        ClarificationSlot::Vip,
                    )
                }
            },
            None => None,
        };

        let spec = match kind {
            TaskKind::PointToPoint => {
                if goal.is_none() {
                    return ParseResult::clarify("Where should I go?", ClarificationSlot::Goal);
                }
                TaskSpec { task: kind, goal, via, vip_id: None }
            }
            TaskKind::Following => {
                if vip_id.is_none() {
                    return ParseResult::clarify("Which pedestrian should I follow?", ClarificationSlot::Vip);
                }
                TaskSpec { task: kind, goal: None, via: Vec::new(), vip_id }
            }
            TaskKind::Guiding => {
                let Some(vip) = vip_id else {
                    return ParseResult::clarify("Which pedestrian should I guide?", ClarificationSlot::Vip);
                };
                if goal.is_none() {
                    return ParseResult::clarify(format!("Where should I guide {vip}?"), ClarificationSlot::Goal);
                }
                TaskSpec { task: kind, goal, via, vip_id: Some(vip) }
            }
        };
        ParseResult::Parsed { task: Some(spec), constraints }
    }
}

fn unknown_fixture(name: &str) -> ParseResult {
    ParseResult::clarify(
        format!("I can't find '{name}' on the map. Which place do you mean?"),
        ClarificationSlot::Fixture(name.to_string()),
    )
}
