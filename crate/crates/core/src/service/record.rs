//! Session event logs and their replay. A log is the exact sequence of
//! operations applied to a session; replaying it must reproduce every
//! state frame bit for bit.

use super::protocol::{Envelope, Inbound, Outbound, ScenarioSource, StateFrame};
use super::session::{Session, SessionConfig};
use crate::agent::checkpoint::{Checkpoint, CheckpointError};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

pub const LOG_FORMAT: &str = "sketchnav-events";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op")]
pub enum LogEntry {
    Message { msg: Envelope<Inbound> },
    Tick,
    /// Frame emitted outside the tick loop (e.g. while paused).
    Snapshot,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventLog {
    pub format: String,
    pub session: String,
    pub config: SessionConfig,
    pub checkpoint: Option<PathBuf>,
    pub scenario_dir: PathBuf,
    pub entries: Vec<LogEntry>,
    pub frames: Vec<StateFrame>,
}

#[derive(Debug, thiserror::Error)]
pub enum LogError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("not an event log (format '{0}')")]
    Format(String),
    #[error("checkpoint: {0}")]
    Checkpoint(#[from] CheckpointError),
}

impl EventLog {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), LogError> {
        std::fs::write(path, serde_json::to_vec(self)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, LogError> {
        let log: EventLog = serde_json::from_slice(&std::fs::read(path)?)?;
        if log.format != LOG_FORMAT {
            return Err(LogError::Format(log.format));
        }
        Ok(log)
    }
}

fn frames_of(out: &[Outbound]) -> impl Iterator<Item = StateFrame> + '_ {
    out.iter().filter_map(|m| match m {
        Outbound::StateFrame(f) => Some((**f).clone()),
        _ => None,
    })
}

/// A session plus an optional recorder; servers and replays both drive
/// sessions through this so the logged operation order is exact.
pub struct Driver {
    pub session: Session,
    pub log: Option<EventLog>,
}

impl Driver {
    pub fn new(session: Session, checkpoint: Option<PathBuf>, record: bool) -> Self {
        let log = record.then(|| EventLog {
            format: LOG_FORMAT.into(),
            session: session.id.clone(),
            config: session.config.clone(),
            checkpoint,
            scenario_dir: session.scenario_dir.clone(),
            entries: Vec::new(),
            frames: Vec::new(),
        });
        Driver { session, log }
    }

    pub fn handle(&mut self, env: &Envelope<Inbound>) -> Vec<Outbound> {
        let out = self.session.handle(env);
        if let Some(log) = &mut self.log {
            let mut msg = env.clone();
            // Logs are self-contained: a scenario read from disk is stored inline.
            if let Inbound::LoadScenario { scenario: ScenarioSource::Path { .. } } = &msg.body {
                if let Some(s) = self.session.scenario() {
                    msg.body = Inbound::LoadScenario { scenario: ScenarioSource::Inline(Box::new(s.to_file())) };
                }
            }
            log.entries.push(LogEntry::Message { msg });
            log.frames.extend(frames_of(&out));
        }
        out
    }

    pub fn tick(&mut self) -> Vec<Outbound> {
        let out = self.session.tick();
        if let Some(log) = &mut self.log {
            log.entries.push(LogEntry::Tick);
            log.frames.extend(frames_of(&out));
        }
        out
    }

    pub fn snapshot(&mut self) -> Outbound {
        let f = self.session.frame();
        if let Some(log) = &mut self.log {
            log.entries.push(LogEntry::Snapshot);
            log.frames.push(f.clone());
        }
        Outbound::StateFrame(Box::new(f))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplayReport {
    pub frames: Vec<StateFrame>,
    pub recorded: usize,
    /// Index of the first frame whose serialization differs, if any.
    pub first_mismatch: Option<usize>,
}

impl ReplayReport {
    pub fn identical(&self) -> bool {
        self.first_mismatch.is_none() && self.frames.len() == self.recorded
    }
}

/// Re-runs a log and compares its frames with the recorded ones.
pub fn replay(log: &EventLog) -> Result<ReplayReport, LogError> {
    let policy = match &log.checkpoint {
        Some(p) => {
            let ck = Checkpoint::load(p)?;
            ck.validate()?;
            Some(ck.actor)
        }
        None => None,
    };
    let mut session = Session::new(log.session.clone(), log.config.clone(), policy);
    session.scenario_dir = log.scenario_dir.clone();
    let mut frames = Vec::new();
    for e in &log.entries {
        match e {
            LogEntry::Message { msg } => frames.extend(frames_of(&session.handle(msg))),
            LogEntry::Tick => frames.extend(frames_of(&session.tick())),
            LogEntry::Snapshot => frames.push(session.frame()),
        }
    }
    let encode = |f: &StateFrame| serde_json::to_string(f).expect("frames serialize");
    let first_mismatch = frames
        .iter()
        .zip(&log.frames)
        .position(|(a, b)| encode(a) != encode(b))
        .or_else(|| (frames.len() != log.frames.len()).then_some(frames.len().min(log.frames.len())));
    Ok(ReplayReport { frames, recorded: log.frames.len(), first_mismatch })
}
