use super::nn::Mlp;
use super::observation::{ACT_DIM, OBS_DIM, SCAN_BINS};
use super::sac::{SacAgent, SacConfig};
use serde::{Deserialize, Serialize};
use std::path::Path;

pub const CHECKPOINT_FORMAT: &str = "sketchnav-sac";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("checkpoint header mismatch: {0}")]
    Mismatch(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format: String,
    pub version: u32,
    pub obs_dim: usize,
    pub act_dim: usize,
    pub scan_bins: usize,
    pub hidden: Vec<usize>,
}

/// JSON weight dump: architecture header, SAC settings, all five networks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub config: SacConfig,
    pub steps: u64,
    pub log_alpha: f64,
    pub actor: Mlp<f32>,
    pub q1: Mlp<f32>,
    pub q2: Mlp<f32>,
    pub q1_target: Mlp<f32>,
    pub q2_target: Mlp<f32>,
}

impl Checkpoint {
    pub fn from_agent(agent: &SacAgent<f32>, steps: u64) -> Self {
        Checkpoint {
            header: CheckpointHeader {
                format: CHECKPOINT_FORMAT.into(),
                version: CHECKPOINT_VERSION,
                obs_dim: agent.obs_dim,
                act_dim: agent.act_dim,
                scan_bins: SCAN_BINS,
                hidden: agent.config.hidden.clone(),
            },
            config: agent.config.clone(),
            steps,
            log_alpha: agent.log_alpha,
            actor: agent.actor.clone(),
            q1: agent.q1.clone(),
            q2: agent.q2.clone(),
            q1_target: agent.q1_target.clone(),
            q2_target: agent.q2_target.clone(),
        }
    }

    /// Rebuilds the agent; optimizer moments restart from zero.
    pub fn to_agent(&self) -> SacAgent<f32> {
        let mut a = SacAgent::from_networks(self.config.clone(), self.actor.clone(), self.q1.clone(), self.q2.clone());
        a.q1_target = self.q1_target.clone();
        a.q2_target = self.q2_target.clone();
        a.log_alpha = self.log_alpha;
        a
    }

    /// Rejects checkpoints whose shapes do not fit the simulator's observation.
    pub fn validate(&self) -> Result<(), CheckpointError> {
        let h = &self.header;
        if h.format != CHECKPOINT_FORMAT || h.version != CHECKPOINT_VERSION {
            return Err(CheckpointError::Mismatch(format!("unsupported format {} v{}", h.format, h.version)));
        }
        if h.obs_dim != OBS_DIM || h.act_dim != ACT_DIM || h.scan_bins != SCAN_BINS {
            return Err(CheckpointError::Mismatch(format!(
                "checkpoint expects obs {} / act {} / {} scan bins, simulator provides {OBS_DIM} / {ACT_DIM} / {SCAN_BINS}",
                h.obs_dim, h.act_dim, h.scan_bins
            )));
        }
        if self.actor.input_dim() != h.obs_dim || self.actor.output_dim() != 2 * h.act_dim {
            return Err(CheckpointError::Mismatch("actor shape disagrees with header".into()));
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), CheckpointError> {
        std::fs::write(path, serde_json::to_vec(self)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, CheckpointError> {
        let ck: Checkpoint = serde_json::from_slice(&std::fs::read(path)?)?;
        ck.validate()?;
        Ok(ck)
    }
}
