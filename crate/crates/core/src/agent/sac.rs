//! Soft actor-critic with twin critics, Polyak-averaged targets and a
//! learned temperature. Actions live in the normalized box [−1, 1]^d;
//! log-probabilities are in that space.

use super::nn::{c, Adam, Grads, Mlp, Real, ScalarAdam, Tape};
use ndarray::{concatenate, s, Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

pub const LOG_STD_MIN: f64 = -20.0;
pub const LOG_STD_MAX: f64 = 2.0;
const HALF_LN_2PI: f64 = 0.918_938_533_204_672_7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SacConfig {
    pub gamma: f64,
    pub tau: f64,
    pub lr: f64,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    pub init_alpha: f64,
    pub auto_alpha: bool,
    /// Defaults to −dim(A).
    pub target_entropy: Option<f64>,
    pub hidden: Vec<usize>,
}

impl Default for SacConfig {
    fn default() -> Self {
        SacConfig {
            gamma: 0.99,
            tau: 0.005,
            lr: 3e-4,
            batch_size: 256,
            buffer_capacity: 100_000,
            init_alpha: 0.2,
            auto_alpha: true,
            target_entropy: None,
            hidden: vec![256, 256],
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("numerical fault: {0}")]
pub struct NumericalFault(pub String);

#[derive(Debug, Clone)]
pub struct Batch<F> {
    pub obs: Array2<F>,
    pub act: Array2<F>,
    pub rew: Array1<F>,
    pub next_obs: Array2<F>,
    pub done: Array1<F>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Losses {
    pub critic: f64,
    pub actor: f64,
    pub alpha_loss: f64,
    pub alpha: f64,
    pub entropy: f64,
}

#[derive(Debug, Clone)]
pub struct SacAgent<F> {
    pub config: SacConfig,
    pub obs_dim: usize,
    pub act_dim: usize,
    pub actor: Mlp<F>,
    pub q1: Mlp<F>,
    pub q2: Mlp<F>,
    pub q1_target: Mlp<F>,
    pub q2_target: Mlp<F>,
    pub log_alpha: f64,
    opt_actor: Adam<F>,
    opt_q1: Adam<F>,
    opt_q2: Adam<F>,
    opt_alpha: ScalarAdam,
}

fn sizes(input: usize, hidden: &[usize], output: usize) -> Vec<usize> {
    std::iter::once(input).chain(hidden.iter().copied()).chain(std::iter::once(output)).collect()
}

impl<F: Real> SacAgent<F> {
    pub fn new<R: Rng + ?Sized>(obs_dim: usize, act_dim: usize, config: SacConfig, rng: &mut R) -> Self {
        let actor = Mlp::new(&sizes(obs_dim, &config.hidden, 2 * act_dim), rng);
        let q1 = Mlp::new(&sizes(obs_dim + act_dim, &config.hidden, 1), rng);
        let q2 = Mlp::new(&sizes(obs_dim + act_dim, &config.hidden, 1), rng);
        Self::from_networks(config, actor, q1, q2)
    }

    /// Targets start as copies of the critics.
    pub fn from_networks(config: SacConfig, actor: Mlp<F>, q1: Mlp<F>, q2: Mlp<F>) -> Self {
        let obs_dim = actor.input_dim();
        let act_dim = actor.output_dim() / 2;
        assert_eq!(q1.input_dim(), obs_dim + act_dim, "critic input must be obs ‖ action");
        let lr = config.lr;
        SacAgent {
            obs_dim,
            act_dim,
            opt_actor: Adam::new(&actor, lr),
            opt_q1: Adam::new(&q1, lr),
            opt_q2: Adam::new(&q2, lr),
            opt_alpha: ScalarAdam::new(lr),
            q1_target: q1.clone(),
            q2_target: q2.clone(),
            log_alpha: config.init_alpha.ln(),
            actor,
            q1,
            q2,
            config,
        }
    }

    pub fn alpha(&self) -> f64 {
        self.log_alpha.exp()
    }

    pub fn target_entropy(&self) -> f64 {
        self.config.target_entropy.unwrap_or(-(self.act_dim as f64))
    }
}

/// Numerically stable log(1 − tanh²z) = 2(ln 2 − z − softplus(−2z)).
pub fn log1m_tanh_sq(z: f64) -> f64 {
    let x = -2.0 * z;
    let softplus = x.max(0.0) + (-x.abs()).exp().ln_1p();
    2.0 * (std::f64::consts::LN_2 - z - softplus)
}

/// Reparameterized squashed-Gaussian sample for given standard-normal noise.
pub struct Squashed<F> {
    pub u: Array2<F>,
    pub log_prob: Array1<F>,
    z: Array2<F>,
    sigma: Array2<F>,
    eps: Array2<F>,
    ls_active: Array2<bool>,
    tape: Tape<F>,
}

pub fn squash<F: Real>(actor: &Mlp<F>, obs: ArrayView2<F>, eps: ArrayView2<F>) -> Squashed<F> {
    let (out, tape) = actor.forward_tape(obs);
    let d = out.ncols() / 2;
    let n = out.nrows();
    let mu = out.slice(s![.., ..d]);
    let ls_raw = out.slice(s![.., d..]);
    let (lo, hi) = (c::<F>(LOG_STD_MIN), c::<F>(LOG_STD_MAX));
    let ls_active = ls_raw.mapv(|v| v > lo && v < hi);
    let ls = ls_raw.mapv(|v| v.max(lo).min(hi));
    let sigma = ls.mapv(F::exp);
    let z = &mu + &(&sigma * &eps);
    let u = z.mapv(F::tanh);
    let mut log_prob = Array1::zeros(n);
    for i in 0..n {
        let mut lp = 0.0;
        for j in 0..d {
            let e = eps[[i, j]].to_f64().unwrap_or(f64::NAN);
            let zz = z[[i, j]].to_f64().unwrap_or(f64::NAN);
            lp += -0.5 * e * e - ls[[i, j]].to_f64().unwrap_or(f64::NAN) - HALF_LN_2PI - log1m_tanh_sq(zz);
        }
        log_prob[i] = c(lp);
    }
    Squashed { u, log_prob, z, sigma, eps: eps.to_owned(), ls_active, tape }
}

pub fn deterministic_action<F: Real>(actor: &Mlp<F>, obs: ArrayView2<F>) -> Array2<F> {
    let out = actor.forward(obs);
    let d = out.ncols() / 2;
    out.slice(s![.., ..d]).mapv(F::tanh)
}

pub fn standard_normal<F: Real, R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Array2<F> {
    Array2::from_shape_simple_fn((rows, cols), || c::<F>(rng.sample::<f64, _>(StandardNormal)))
}

/// Samples one action for one observation. Returns the normalized action
/// and, for stochastic sampling, its log-probability.
pub fn sample_action<F: Real, R: Rng + ?Sized>(
    actor: &Mlp<F>,
    obs: &[F],
    deterministic: bool,
    rng: &mut R,
) -> Result<(Vec<F>, Option<F>), NumericalFault> {
    let x = ArrayView2::from_shape((1, obs.len()), obs).map_err(|e| NumericalFault(e.to_string()))?;
    let (u, lp) = if deterministic {
        (deterministic_action(actor, x), None)
    } else {
        let eps = standard_normal(1, actor.output_dim() / 2, rng);
        let s = squash(actor, x, eps.view());
        (s.u, Some(s.log_prob[0]))
    };
    let u: Vec<F> = u.row(0).to_vec();
    if u.iter().any(|v| !v.is_finite()) || lp.is_some_and(|l| !l.is_finite()) {
        return Err(NumericalFault("policy produced a non-finite action".into()));
    }
    Ok((u, lp))
}

fn cat<F: Real>(a: ArrayView2<F>, b: ArrayView2<F>) -> Array2<F> {
    concatenate(Axis(1), &[a, b]).expect("matching row counts")
}

fn q_values<F: Real>(q: &Mlp<F>, obs: ArrayView2<F>, act: ArrayView2<F>) -> Array1<F> {
    q.forward(cat(obs, act).view()).column(0).to_owned()
}

/// Soft Bellman backup y = r + (1 − done)·γ·(min Q'(s', a') − α·log π(a'|s')).
/// With `eps_next = None` the policy mean is used and the entropy term dropped.
pub fn critic_target<F: Real>(agent: &SacAgent<F>, batch: &Batch<F>, eps_next: Option<ArrayView2<F>>) -> Array1<F> {
    let next = batch.next_obs.view();
    let (act, entropy_term) = match eps_next {
        Some(eps) => {
            let s = squash(&agent.actor, next, eps);
            let alpha: F = c(agent.alpha());
            (s.u, Some(s.log_prob.mapv(|l| alpha * l)))
        }
        None => (deterministic_action(&agent.actor, next), None),
    };
    let q1 = q_values(&agent.q1_target, next, act.view());
    let q2 = q_values(&agent.q2_target, next, act.view());
    let mut v = ndarray::Zip::from(&q1).and(&q2).map_collect(|&a, &b| a.min(b));
    if let Some(t) = entropy_term {
        v -= &t;
    }
    let gamma: F = c(agent.config.gamma);
    ndarray::Zip::from(&batch.rew).and(&batch.done).and(&v).map_collect(|&r, &d, &v| r + (F::one() - d) * gamma * v)
}

/// Mean squared error of one critic against fixed targets, with gradients.
pub fn critic_loss_grad<F: Real>(q: &Mlp<F>, obs: ArrayView2<F>, act: ArrayView2<F>, y: &Array1<F>) -> (F, Grads<F>) {
    let n: F = c(obs.nrows() as f64);
    let (pred, tape) = q.forward_tape(cat(obs, act).view());
    let diff = &pred.column(0) - y;
    let loss = diff.mapv(|d| d * d).sum() / n;
    let two: F = c(2.0);
    let g_out = diff.mapv(|d| two * d / n).insert_axis(Axis(1));
    let (g, _) = q.backward(&tape, g_out);
    (loss, g)
}

pub struct ActorStep<F> {
    pub loss: F,
    pub grads: Grads<F>,
    pub mean_log_prob: f64,
}

/// Actor objective E[α·log π(ã|s) − min(Q1, Q2)(s, ã)] for given noise.
pub fn actor_loss_grad<F: Real>(agent: &SacAgent<F>, obs: ArrayView2<F>, eps: ArrayView2<F>) -> ActorStep<F> {
    let n = obs.nrows();
    let nf: F = c(n as f64);
    let d = agent.act_dim;
    let od = agent.obs_dim;
    let alpha: F = c(agent.alpha());
    let s = squash(&agent.actor, obs, eps);
    let x = cat(obs, s.u.view());
    let (q1, t1) = agent.q1.forward_tape(x.view());
    let (q2, t2) = agent.q2.forward_tape(x.view());

    let mut loss = F::zero();
    let mut g1 = Array2::zeros((n, 1));
    let mut g2 = Array2::zeros((n, 1));
    for i in 0..n {
        let (a, b) = (q1[[i, 0]], q2[[i, 0]]);
        let qmin = if a <= b {
            g1[[i, 0]] = -F::one() / nf;
            a
        } else {
            g2[[i, 0]] = -F::one() / nf;
            b
        };
        loss = loss + (alpha * s.log_prob[i] - qmin) / nf;
    }
    let (_, gx1) = agent.q1.backward(&t1, g1);
    let (_, gx2) = agent.q2.backward(&t2, g2);
    let du = &gx1.slice(s![.., od..]) + &gx2.slice(s![.., od..]);

    let two: F = c(2.0);
    let mut g_out = Array2::zeros((n, 2 * d));
    for i in 0..n {
        for j in 0..d {
            let u = s.u[[i, j]];
            let dz = alpha / nf * two * s.z[[i, j]].tanh() + du[[i, j]] * (F::one() - u * u);
            g_out[[i, j]] = dz;
            g_out[[i, d + j]] =
                if s.ls_active[[i, j]] { -alpha / nf + dz * s.sigma[[i, j]] * s.eps[[i, j]] } else { F::zero() };
        }
    }
    let (grads, _) = agent.actor.backward(&s.tape, g_out);
    let mean_log_prob = s.log_prob.iter().map(|v| v.to_f64().unwrap_or(f64::NAN)).sum::<f64>() / n as f64;
    ActorStep { loss, grads, mean_log_prob }
}

/// Temperature loss −log α·(mean log π + H̄) and its derivative in log α.
pub fn alpha_loss_grad(log_alpha: f64, mean_log_prob: f64, target_entropy: f64) -> (f64, f64) {
    let k = mean_log_prob + target_entropy;
    (-log_alpha * k, -k)
}

fn finite<F: Real>(name: &str, v: F) -> Result<f64, NumericalFault> {
    let x = v.to_f64().unwrap_or(f64::NAN);
    if x.is_finite() {
        Ok(x)
    } else {
        Err(NumericalFault(format!("{name} loss is not finite")))
    }
}

/// One gradient step on critics, actor and temperature, then the target update.
pub fn update_step<F: Real, R: Rng + ?Sized>(
    agent: &mut SacAgent<F>,
    batch: &Batch<F>,
    rng: &mut R,
) -> Result<Losses, NumericalFault> {
    let n = batch.obs.nrows();
    let eps_next = standard_normal::<F, _>(n, agent.act_dim, rng);
    let eps = standard_normal::<F, _>(n, agent.act_dim, rng);

    let y = critic_target(agent, batch, Some(eps_next.view()));
    let (l1, g1) = critic_loss_grad(&agent.q1, batch.obs.view(), batch.act.view(), &y);
    let (l2, g2) = critic_loss_grad(&agent.q2, batch.obs.view(), batch.act.view(), &y);
    let critic = finite("critic", l1)? + finite("critic", l2)?;
    if !g1.is_finite() || !g2.is_finite() {
        return Err(NumericalFault("critic gradient is not finite".into()));
    }
    agent.opt_q1.step(&mut agent.q1, &g1);
    agent.opt_q2.step(&mut agent.q2, &g2);

    let a = actor_loss_grad(agent, batch.obs.view(), eps.view());
    let actor = finite("actor", a.loss)?;
    if !a.grads.is_finite() {
        return Err(NumericalFault("actor gradient is not finite".into()));
    }
    agent.opt_actor.step(&mut agent.actor, &a.grads);

    let (alpha_loss, g_alpha) = alpha_loss_grad(agent.log_alpha, a.mean_log_prob, agent.target_entropy());
    if agent.config.auto_alpha {
        let mut la = agent.log_alpha;
        agent.opt_alpha.step(&mut la, g_alpha);
        agent.log_alpha = la;
    }

    let tau: F = c(agent.config.tau);
    agent.q1_target.soft_update(&agent.q1, tau);
    agent.q2_target.soft_update(&agent.q2, tau);
    Ok(Losses { critic, actor, alpha_loss, alpha: agent.alpha(), entropy: -a.mean_log_prob })
}
