//! Headless evaluation of a checkpoint on a scenario's scripted tests.

use super::metrics::Metrics;
use super::protocol::{ControlMode, Envelope, Inbound, Outbound};
use super::scenario::Scenario;
use super::session::{Session, SessionConfig};
use crate::agent::checkpoint::{Checkpoint, CheckpointError};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("config: {0}")]
    Config(#[from] CheckpointError),
    #[error("scenario '{0}' has no tests")]
    NoTests(String),
    #[error("test '{test}' could not start: {message}")]
    Setup { test: String, message: String },
}

/// Runs `n_episodes` deterministic-policy episodes, cycling through the
/// scenario's tests with seeded start jitter. `use_constraints = false` is
/// the physical-scan baseline; everything else is shared.
pub fn evaluate(
    checkpoint: &Checkpoint,
    scenario: &Scenario,
    n_episodes: usize,
    use_constraints: bool,
    seed: u64,
) -> Result<Metrics, EvalError> {
    let config = SessionConfig { use_constraints, seed, ..SessionConfig::default() };
    evaluate_with(checkpoint, scenario, n_episodes, config)
}

pub fn evaluate_with(
    checkpoint: &Checkpoint,
    scenario: &Scenario,
    n_episodes: usize,
    config: SessionConfig,
) -> Result<Metrics, EvalError> {
    checkpoint.validate()?;
    if scenario.tests.is_empty() {
        return Err(EvalError::NoTests(scenario.name.clone()));
    }
    let mut jitter = ChaCha8Rng::seed_from_u64(config.seed ^ 0x6A17);
    let mut session = Session::new("eval", config, Some(checkpoint.actor.clone())).with_scenario(scenario.clone());
    session.handle(&Envelope::new(None, Inbound::SetControl { mode: ControlMode::Policy }));
    let mut metrics = Metrics::default();
    for i in 0..n_episodes {
        let k = i % scenario.tests.len();
        let start = session.jittered_start(k, &mut jitter);
        let out = session.start_test(k, start);
        if let Some(Outbound::Error { message, .. }) = out.iter().find(|m| matches!(m, Outbound::Error { .. })) {
            return Err(EvalError::Setup { test: scenario.tests[k].name.clone(), message: message.clone() });
        }
        if let Some(mut record) = session.run_to_end() {
            record.episode = i as u64;
            metrics.push(record);
        }
    }
    Ok(metrics)
}
