//! Soft actor-critic navigation policy: networks, losses, replay,
//! randomized training environment and checkpoints.

pub mod checkpoint;
pub mod env;
pub mod nn;
pub mod observation;
pub mod replay;
pub mod sac;
pub mod train;

pub use checkpoint::{Checkpoint, CheckpointError};
pub use env::{reachable, EnvConfig, EpisodeEnd, NavEnv};
pub use nn::{Adam, Mlp};
pub use observation::{action_to_command, build_observation, reward, RewardParams, StepEvent, ACT_DIM, OBS_DIM, SCAN_BINS};
pub use replay::{ReplayBuffer, Transition};
pub use sac::{
    actor_loss_grad, alpha_loss_grad, critic_loss_grad, critic_target, sample_action, update_step, Batch, Losses,
    NumericalFault, SacAgent, SacConfig,
};
pub use crate::service::eval::evaluate;
pub use train::{train, write_log_csv, LogRow, TrainConfig, TrainError, TrainResult};
