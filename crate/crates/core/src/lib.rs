//! Multitask robot navigation driven by language instructions and sketches.
//!
//! The simulator, constraint compiler, crowd models, task-mode state machine,
//! SAC policy and session service live in the modules below; the commonly
//! shared types are re-exported at the crate root.

pub mod agent;
pub mod command;
pub mod constraints;
pub mod crowd;
pub mod geometry;
pub mod service;
pub mod taskmode;
pub mod world;

pub use agent::{Checkpoint, SacAgent, SacConfig, TrainConfig};
pub use command::{parse_instruction, ParseResult, Place, TaskKind, TaskSpec};
pub use constraints::{ConstraintSet, Fixture, SemanticMap, Sketch, SketchKind};
pub use crowd::{Pedestrian, PedestrianModel, PedestrianState};
pub use geometry::{ConvexPolygon, Segment, Vec2};
pub use service::{Metrics, Outcome, Scenario, Session, SessionConfig};
pub use taskmode::{GroundedTask, Phase, TaskParams, TaskProgress};
pub use world::{CollisionReport, LaserScan, Pose, RobotState, ScanConfig, World};
