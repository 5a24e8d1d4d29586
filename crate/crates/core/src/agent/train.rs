use super::checkpoint::{Checkpoint, CheckpointError};
use super::env::{EnvConfig, EpisodeEnd, NavEnv};
use super::observation::{ACT_DIM, OBS_DIM};
use super::replay::{ReplayBuffer, Transition};
use super::sac::{sample_action, update_step, Losses, NumericalFault, SacAgent, SacConfig};
use crate::world::CollisionReport;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;
use std::path::Path;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub seed: u64,
    pub total_steps: u64,
    /// Uniform random actions before the policy takes over.
    pub warmup_steps: u64,
    pub update_after: u64,
    pub update_every: u64,
    pub gradient_steps: u64,
    pub trailing_window: usize,
    pub checkpoint_every: Option<u64>,
    pub sac: SacConfig,
    pub env: EnvConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            seed: 0,
            total_steps: 200_000,
            warmup_steps: 5_000,
            update_after: 1_000,
            update_every: 1,
            gradient_steps: 1,
            trailing_window: 100,
            checkpoint_every: None,
            sac: SacConfig::default(),
            env: EnvConfig::default(),
        }
    }
}

/// One row per finished episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub step: u64,
    pub episode: u64,
    #[serde(rename = "return")]
    pub ret: f64,
    pub success_rate: f64,
    pub critic_loss: f64,
    pub actor_loss: f64,
    pub alpha: f64,
    pub outcome: String,
}

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error(transparent)]
    Numerical(#[from] NumericalFault),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("could not place a reachable episode in {0} consecutive tries")]
    Placement(usize),
}

pub struct TrainResult {
    pub agent: SacAgent<f32>,
    pub log: Vec<LogRow>,
    pub skipped_episodes: usize,
    pub steps: u64,
}

pub fn outcome_label(end: &EpisodeEnd) -> &'static str {
    match end {
        EpisodeEnd::Reached => "success",
        EpisodeEnd::Timeout => "timeout",
        EpisodeEnd::Contact(CollisionReport::VirtualContact(_)) => "alpha",
        EpisodeEnd::Contact(CollisionReport::SafetyZoneEntry(_)) => "beta",
        EpisodeEnd::Contact(_) => "collision",
    }
}

fn to_f32(v: &[f64]) -> Vec<f32> {
    v.iter().map(|&x| x as f32).collect()
}

/// Episodic SAC training on freshly randomized worlds.
pub fn train(
    cfg: &TrainConfig,
    checkpoint_path: Option<&Path>,
    on_episode: &mut dyn FnMut(&LogRow),
) -> Result<TrainResult, TrainError> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut env_rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x5EED_0F_E1));
    let mut agent: SacAgent<f32> = SacAgent::new(OBS_DIM, ACT_DIM, cfg.sac.clone(), &mut rng);
    let mut buffer = ReplayBuffer::new(cfg.sac.buffer_capacity.max(1), OBS_DIM, ACT_DIM);
    let mut env = NavEnv::new(cfg.env.clone());
    let mut log = Vec::new();
    let mut recent: VecDeque<bool> = VecDeque::with_capacity(cfg.trailing_window);
    let mut last = Losses::default();
    let (mut step, mut episode, mut skipped, mut skipped_in_row) = (0u64, 0u64, 0usize, 0usize);

    while step < cfg.total_steps {
        let Some(mut obs) = env.reset(&mut env_rng) else {
            skipped += 1;
            skipped_in_row += 1;
            if skipped_in_row >= 100 {
                return Err(TrainError::Placement(skipped_in_row));
            }
            continue;
        };
        skipped_in_row = 0;
        let mut ret = 0.0;
        loop {
            let u: Vec<f64> = if step < cfg.warmup_steps {
                (0..ACT_DIM).map(|_| rng.random_range(-1.0..1.0)).collect()
            } else {
                let (u, _) = sample_action(&agent.actor, &to_f32(&obs), false, &mut rng)?;
                u.into_iter().map(f64::from).collect()
            };
            let s = env.step(&u);
            buffer.push(&Transition { obs, action: u, reward: s.reward, next_obs: s.obs.clone(), done: s.terminal });
            obs = s.obs;
            ret += s.reward;
            step += 1;
            if step >= cfg.update_after && step % cfg.update_every.max(1) == 0 && buffer.len() >= cfg.sac.batch_size {
                for _ in 0..cfg.gradient_steps {
                    let batch = buffer.sample(cfg.sac.batch_size, &mut rng);
                    last = update_step(&mut agent, &batch, &mut rng)?;
                }
            }
            if let (Some(every), Some(path)) = (cfg.checkpoint_every, checkpoint_path) {
                if every > 0 && step % every == 0 {
                    Checkpoint::from_agent(&agent, step).save(path)?;
                }
            }
            if let Some(end) = s.end {
                episode += 1;
                if recent.len() == cfg.trailing_window.max(1) {
                    recent.pop_front();
                }
                recent.push_back(end == EpisodeEnd::Reached);
                let row = LogRow {
                    step,
                    episode,
                    ret,
                    success_rate: recent.iter().filter(|&&x| x).count() as f64 / recent.len() as f64,
                    critic_loss: last.critic,
                    actor_loss: last.actor,
                    alpha: last.alpha,
                    outcome: outcome_label(&end).to_string(),
                };
                on_episode(&row);
                log.push(row);
                break;
            }
            if step >= cfg.total_steps {
                break;
            }
        }
    }
    if let Some(path) = checkpoint_path {
        Checkpoint::from_agent(&agent, step).save(path)?;
    }
    Ok(TrainResult { agent, log, skipped_episodes: skipped, steps: step })
}

pub fn write_log_csv(rows: &[LogRow], path: impl AsRef<Path>) -> Result<(), TrainError> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}
