//! Wire protocol between a live session and its clients: JSON messages in a
//! versioned envelope, framed by a 4-byte big-endian length prefix.

use super::metrics::EpisodeRecord;
use super::scenario::ScenarioFile;
use crate::command::{ClarificationSlot, ParseResult, TaskSpec};
use crate::constraints::{ConstraintSet, SemanticMap, Sketch};
use crate::crowd::PedestrianState;
use crate::geometry::Vec2;
use crate::taskmode::Phase;
use crate::world::{ContactKind, World};
use serde::{Deserialize, Serialize};
use std::io::{self, Read, Write};

pub const PROTOCOL_VERSION: u32 = 1;
/// Frames above this size are rejected.
pub const MAX_FRAME: usize = 16 * 1024 * 1024;
/// Shipped JSON schema describing every message.
pub const PROTOCOL_SCHEMA: &str = include_str!("../../schema/protocol.schema.json");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ControlMode {
    Policy,
    Manual,
    Idle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScenarioSource {
    Path { path: String },
    Inline(Box<ScenarioFile>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type")]
pub enum Inbound {
    LoadScenario { scenario: ScenarioSource },
    AddSketch { sketch: Sketch },
    ClearSketches,
    Command { text: String },
    /// A command already interpreted off the tick path (language backend).
    ResolvedCommand { text: String, result: ParseResult },
    ClarificationAnswer { text: String },
    SetControl { mode: ControlMode },
    /// Teleop command: linear (m/s) and angular (rad/s) velocity.
    ManualInput { linear: f64, angular: f64 },
    Start {
        #[serde(default)]
        test: Option<usize>,
    },
    Reset,
    ResyncRequest,
}

impl Inbound {
    pub fn kind(&self) -> &'static str {
        match self {
            Inbound::LoadScenario { .. } => "LoadScenario",
            Inbound::AddSketch { .. } => "AddSketch",
            Inbound::ClearSketches => "ClearSketches",
            Inbound::Command { .. } => "Command",
            Inbound::ResolvedCommand { .. } => "ResolvedCommand",
            Inbound::ClarificationAnswer { .. } => "ClarificationAnswer",
            Inbound::SetControl { .. } => "SetControl",
            Inbound::ManualInput { .. } => "ManualInput",
            Inbound::Start { .. } => "Start",
            Inbound::Reset => "Reset",
            Inbound::ResyncRequest => "ResyncRequest",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    Malformed,
    UnsupportedVersion,
    UnknownSession,
    NoScenario,
    InvalidScenario,
    InvalidSketch,
    TaskFault,
    FrameTooLarge,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobotFrame {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
    pub v: f64,
    pub w: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateFrame {
    pub tick: u64,
    pub time: f64,
    pub running: bool,
    pub control: ControlMode,
    pub robot: RobotFrame,
    pub pedestrians: Vec<PedestrianState>,
    /// The scan the controller sees (merged unless constraints are disabled).
    pub scan: Vec<f64>,
    pub target: Option<Vec2>,
    pub phase: Option<Phase>,
    pub contact: ContactKind,
    pub constraint_revision: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type")]
pub enum Outbound {
    Ack {
        of: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        seq: Option<u64>,
    },
    Error {
        code: ErrorCode,
        message: String,
    },
    StateFrame(Box<StateFrame>),
    TaskAssigned {
        task: TaskSpec,
        goal: Option<Vec2>,
        vias: Vec<Vec2>,
    },
    ClarificationRequest {
        question: String,
        slot: ClarificationSlot,
    },
    /// Current constraint geometry for drawing, parser-derived entries included.
    ConstraintOverlay {
        revision: u64,
        constraints: ConstraintSet,
        via_points: Vec<Vec2>,
        goal: Option<Vec2>,
    },
    EpisodeEnded {
        record: EpisodeRecord,
    },
    Scene {
        name: String,
        world: World,
        map: SemanticMap,
        tests: Vec<String>,
    },
}

impl Outbound {
    pub fn kind(&self) -> &'static str {
        match self {
            Outbound::Ack { .. } => "Ack",
            Outbound::Error { .. } => "Error",
            Outbound::StateFrame(_) => "StateFrame",
            Outbound::TaskAssigned { .. } => "TaskAssigned",
            Outbound::ClarificationRequest { .. } => "ClarificationRequest",
            Outbound::ConstraintOverlay { .. } => "ConstraintOverlay",
            Outbound::EpisodeEnded { .. } => "EpisodeEnded",
            Outbound::Scene { .. } => "Scene",
        }
    }

    pub fn error(code: ErrorCode, message: impl Into<String>) -> Self {
        Outbound::Error { code, message: message.into() }
    }
}

/// Versioned wrapper carried by every frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Envelope<T> {
    pub v: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub session: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seq: Option<u64>,
    #[serde(flatten)]
    pub body: T,
}

impl<T> Envelope<T> {
    pub fn new(session: Option<String>, body: T) -> Self {
        Envelope { v: PROTOCOL_VERSION, session, seq: None, body }
    }
}

/// Decodes an inbound frame, mapping failures to the error reply to send.
pub fn decode_inbound(bytes: &[u8]) -> Result<Envelope<Inbound>, Outbound> {
    let value: serde_json::Value =
        serde_json::from_slice(bytes).map_err(|e| Outbound::error(ErrorCode::Malformed, format!("invalid JSON: {e}")))?;
    match value.get("v").and_then(|v| v.as_u64()) {
        Some(v) if v == PROTOCOL_VERSION as u64 => {}
        Some(v) => return Err(Outbound::error(ErrorCode::UnsupportedVersion, format!("protocol version {v} not supported"))),
        None => return Err(Outbound::error(ErrorCode::Malformed, "missing protocol version field `v`")),
    }
    serde_json::from_value(value).map_err(|e| Outbound::error(ErrorCode::Malformed, e.to_string()))
}

pub fn write_frame<W: Write>(w: &mut W, payload: &[u8]) -> io::Result<()> {
    let len = u32::try_from(payload.len()).map_err(|_| io::Error::new(io::ErrorKind::InvalidInput, "frame too large"))?;
    w.write_all(&len.to_be_bytes())?;
    w.write_all(payload)?;
    w.flush()
}

/// Reads one frame; `Ok(None)` on a clean end of stream.
pub fn read_frame<R: Read>(r: &mut R) -> io::Result<Option<Vec<u8>>> {
    let mut len = [0u8; 4];
    match r.read_exact(&mut len) {
        Ok(()) => {}
        Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => return Ok(None),
        Err(e) => return Err(e),
    }
    let n = u32::from_be_bytes(len) as usize;
    if n > MAX_FRAME {
        return Err(io::Error::new(io::ErrorKind::InvalidData, format!("frame of {n} bytes exceeds limit")));
    }
    let mut buf = vec![0u8; n];
    r.read_exact(&mut buf)?;
    Ok(Some(buf))
}

pub fn encode<T: Serialize>(session: Option<&str>, body: &T) -> Vec<u8> {
    serde_json::to_vec(&Envelope::new(session.map(str::to_string), body)).expect("protocol types serialize")
}
