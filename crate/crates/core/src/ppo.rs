//! Continuous scaling agent: Gaussian actor with a `tanh`-bounded mean, a state
//! value critic, and clipped-surrogate updates over an on-policy rollout.
//!
//! The exploration stddev follows a schedule rather than being learned, so the
//! entropy bonus is reported but contributes no gradient.

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dqn::stack;
use crate::error::{Error, Result};
use crate::nn::{Adam, AdamConfig, Head, Mlp, NetworkCheckpoint};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PpoConfig {
    pub hidden: Vec<usize>,
    pub actor_learning_rate: f64,
    pub critic_learning_rate: f64,
    pub gamma: f64,
    pub clip_epsilon: f64,
    pub entropy_coef: f64,
    pub update_epochs: usize,
    pub batch_threshold: usize,
    pub stddev_start: f64,
    pub stddev_end: f64,
    pub stddev_decay: f64,
    pub delta_max_mc: i64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            hidden: vec![64, 128, 128, 64],
            actor_learning_rate: 3e-4,
            critic_learning_rate: 1e-3,
            gamma: 0.99,
            clip_epsilon: 0.2,
            entropy_coef: 0.01,
            update_epochs: 10,
            batch_threshold: 600,
            stddev_start: 0.5,
            stddev_end: 0.05,
            stddev_decay: 0.95,
            delta_max_mc: 100,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = !self.hidden.is_empty()
            && self.hidden.iter().all(|&h| h > 0)
            && self.actor_learning_rate > 0.0
            && self.critic_learning_rate > 0.0
            && (0.0..=1.0).contains(&self.gamma)
            && self.clip_epsilon > 0.0
            && self.entropy_coef >= 0.0
            && self.update_epochs > 0
            && self.batch_threshold > 0
            && self.stddev_end > 0.0
            && self.stddev_end <= self.stddev_start
            && self.stddev_decay > 0.0
            && self.stddev_decay <= 1.0
            && self.delta_max_mc > 0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid PPO config {self:?}")))
        }
    }

    /// Exploration stddev after `episode` completed episodes.
    pub fn stddev_at(&self, episode: u64) -> f64 {
        (self.stddev_start * self.stddev_decay.powf(episode as f64)).max(self.stddev_end)
    }

    /// Scales an action in [-1, 1] to a limit change in millicores.
    pub fn action_delta(&self, action: f64) -> i64 {
        (action.clamp(-1.0, 1.0) * self.delta_max_mc as f64).round() as i64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutRecord {
    pub state: Vec<f64>,
    /// Applied action, clamped to [-1, 1].
    pub action: f64,
    /// Unclamped Gaussian sample the log-probability refers to.
    pub raw_action: f64,
    pub log_prob: f64,
    pub reward: f64,
    pub next_state: Vec<f64>,
    /// Last record of an episode; returns do not flow across it.
    pub done: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActionSample {
    pub action: f64,
    pub raw: f64,
    pub log_prob: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UpdateStats {
    pub actor_loss: f64,
    pub critic_loss: f64,
    pub entropy: f64,
}

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

pub fn gaussian_log_prob(x: f64, mean: f64, stddev: f64) -> f64 {
    let z = (x - mean) / stddev;
    -0.5 * z * z - stddev.ln() - LN_SQRT_2PI
}

pub fn gaussian_entropy(stddev: f64) -> f64 {
    0.5 + LN_SQRT_2PI + stddev.ln()
}

/// Per-sample clipped surrogate `min(r A, clip(r, 1-e, 1+e) A)`.
pub fn clipped_surrogate(ratio: f64, advantage: f64, clip_epsilon: f64) -> f64 {
    let clipped = ratio.clamp(1.0 - clip_epsilon, 1.0 + clip_epsilon);
    (ratio * advantage).min(clipped * advantage)
}

/// Discounted return-to-go per record, restarting after every `done` record and
/// bootstrapping 0 at the end of the buffer.
pub fn discounted_returns(rewards: &[f64], dones: &[bool], gamma: f64) -> Vec<f64> {
    let mut out = vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for i in (0..rewards.len()).rev() {
        if dones[i] {
            acc = 0.0;
        }
        acc = rewards[i] + gamma * acc;
        out[i] = acc;
    }
    out
}

/// Shifts and scales to zero mean and unit variance. Constant input maps to zeros.
pub fn normalize(values: &mut [f64]) {
    if values.is_empty() {
        return;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    for v in values.iter_mut() {
        *v = if std > 1e-12 { (*v - mean) / std } else { 0.0 };
    }
}

#[derive(Debug, Clone)]
pub struct PpoAgent {
    config: PpoConfig,
    actor: Mlp,
    critic: Mlp,
    actor_opt: Adam,
    critic_opt: Adam,
    buffer: Vec<RolloutRecord>,
    stddev: f64,
}

impl PpoAgent {
    pub fn new<R: Rng + ?Sized>(config: PpoConfig, input_dim: usize, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let mut dims = vec![input_dim];
        dims.extend(&config.hidden);
        dims.push(1);
        let actor = Mlp::new(&dims, Head::Tanh, rng)?;
        let critic = Mlp::new(&dims, Head::Linear, rng)?;
        Ok(Self::from_parts(config, actor, critic, None, None))
    }

    fn from_parts(
        config: PpoConfig,
        actor: Mlp,
        critic: Mlp,
        actor_opt: Option<Adam>,
        critic_opt: Option<Adam>,
    ) -> Self {
        let actor_opt = actor_opt
            .unwrap_or_else(|| Adam::new(AdamConfig::with_lr(config.actor_learning_rate), &actor));
        let critic_opt = critic_opt.unwrap_or_else(|| {
            Adam::new(AdamConfig::with_lr(config.critic_learning_rate), &critic)
        });
        Self {
            stddev: config.stddev_start,
            config,
            actor,
            critic,
            actor_opt,
            critic_opt,
            buffer: Vec::new(),
        }
    }

    pub fn config(&self) -> &PpoConfig {
        &self.config
    }

    pub fn actor(&self) -> &Mlp {
        &self.actor
    }

    pub fn actor_mut(&mut self) -> &mut Mlp {
        &mut self.actor
    }

    pub fn critic(&self) -> &Mlp {
        &self.critic
    }

    pub fn critic_mut(&mut self) -> &mut Mlp {
        &mut self.critic
    }

    pub fn input_dim(&self) -> usize {
        self.actor.input_dim()
    }

    pub fn stddev(&self) -> f64 {
        self.stddev
    }

    pub fn set_stddev(&mut self, stddev: f64) -> Result<()> {
        if !(stddev > 0.0 && stddev.is_finite()) {
            return Err(Error::Config(format!("stddev must be positive, got {stddev}")));
        }
        self.stddev = stddev;
        Ok(())
    }

    /// Sets the stddev from the schedule for `episode` and returns it.
    pub fn decay_stddev(&mut self, episode: u64) -> f64 {
        self.stddev = self.config.stddev_at(episode);
        self.stddev
    }

    pub fn buffer(&self) -> &[RolloutRecord] {
        &self.buffer
    }

    pub fn mean_action(&self, state: &[f64]) -> Result<f64> {
        let m = self.actor.forward(state)?[0];
        if !m.is_finite() {
            return Err(Error::NonFinite("actor mean".into()));
        }
        Ok(m)
    }

    pub fn value(&self, state: &[f64]) -> Result<f64> {
        Ok(self.critic.forward(state)?[0])
    }

    /// Draws `mean + stddev * z` and clamps it to [-1, 1]; without `explore` the
    /// mean is returned. The log-probability is that of the unclamped draw.
    pub fn sample_action<R: Rng + ?Sized>(
        &self,
        state: &[f64],
        explore: bool,
        rng: &mut R,
    ) -> Result<ActionSample> {
        let mean = self.mean_action(state)?;
        let raw = if explore {
            let z: f64 = StandardNormal.sample(rng);
            mean + self.stddev * z
        } else {
            mean
        };
        Ok(ActionSample {
            action: raw.clamp(-1.0, 1.0),
            raw,
            log_prob: gaussian_log_prob(raw, mean, self.stddev),
        })
    }

    pub fn action_delta(&self, action: f64) -> i64 {
        self.config.action_delta(action)
    }

    pub fn remember(&mut self, record: RolloutRecord) -> Result<()> {
        let d = self.input_dim();
        for len in [record.state.len(), record.next_state.len()] {
            if len != d {
                return Err(Error::Shape {
                    context: "rollout record",
                    expected: d,
                    actual: len,
                });
            }
        }
        if !(record.reward.is_finite() && record.log_prob.is_finite() && record.raw_action.is_finite())
        {
            return Err(Error::NonFinite("rollout record".into()));
        }
        self.buffer.push(RolloutRecord {
            action: record.action.clamp(-1.0, 1.0),
            ..record
        });
        Ok(())
    }

    /// Marks the newest record as the end of an episode.
    pub fn end_episode(&mut self) {
        if let Some(last) = self.buffer.last_mut() {
            last.done = true;
        }
    }

    pub fn ready(&self) -> bool {
        self.buffer.len() >= self.config.batch_threshold
    }

    /// Returns and raw advantages `R - V(s)` for the current buffer.
    pub fn compute_advantages(&self) -> Result<(Vec<f64>, Vec<f64>)> {
        if self.buffer.is_empty() {
            return Err(Error::Usage("empty rollout buffer".into()));
        }
        let rewards: Vec<f64> = self.buffer.iter().map(|r| r.reward).collect();
        let dones: Vec<bool> = self.buffer.iter().map(|r| r.done).collect();
        let returns = discounted_returns(&rewards, &dones, self.config.gamma);
        let states = self.states()?;
        let values = self.critic.forward_batch(&states)?;
        let adv = returns
            .iter()
            .zip(values.column(0))
            .map(|(r, v)| r - v)
            .collect();
        Ok((returns, adv))
    }

    fn states(&self) -> Result<Array2<f64>> {
        stack(
            self.buffer.iter().map(|r| r.state.as_slice()),
            self.buffer.len(),
            self.input_dim(),
        )
    }

    /// Runs the clipped-surrogate update for the configured number of epochs
    /// and clears the buffer. Returns `None` while the buffer is below the
    /// batch threshold.
    pub fn update(&mut self) -> Result<Option<UpdateStats>> {
        if !self.ready() {
            return Ok(None);
        }
        self.update_now().map(Some)
    }

    /// Same as [`PpoAgent::update`] but ignores the batch threshold.
    pub fn update_now(&mut self) -> Result<UpdateStats> {
        let (returns, mut adv) = self.compute_advantages()?;
        normalize(&mut adv);
        let n = self.buffer.len();
        let nf = n as f64;
        let states = self.states()?;
        let raw: Vec<f64> = self.buffer.iter().map(|r| r.raw_action).collect();
        let old_logp: Vec<f64> = self.buffer.iter().map(|r| r.log_prob).collect();
        let sd = self.stddev;
        let eps = self.config.clip_epsilon;
        let entropy = gaussian_entropy(sd);
        let mut stats = UpdateStats {
            actor_loss: 0.0,
            critic_loss: 0.0,
            entropy,
        };
        for _ in 0..self.config.update_epochs {
            let pass = self.actor.forward_cached(&states)?;
            let mut grad = Array2::zeros((n, 1));
            let mut surrogate = 0.0;
            for i in 0..n {
                let mean = pass.output[[i, 0]];
                let ratio = (gaussian_log_prob(raw[i], mean, sd) - old_logp[i]).exp();
                surrogate += clipped_surrogate(ratio, adv[i], eps);
                let clipped = (adv[i] > 0.0 && ratio > 1.0 + eps)
                    || (adv[i] < 0.0 && ratio < 1.0 - eps);
                if !clipped {
                    // d(r A)/d mean = r A (x - mean) / sd^2; the loss is its negation.
                    grad[[i, 0]] = -ratio * adv[i] * (raw[i] - mean) / (sd * sd) / nf;
                }
            }
            stats.actor_loss = -(surrogate / nf) - self.config.entropy_coef * entropy;
            if !stats.actor_loss.is_finite() {
                return Err(Error::NonFinite("actor loss".into()));
            }
            let g = self.actor.backward(&pass, &grad)?;
            self.actor_opt.step(&mut self.actor, &g)?;

            let pass = self.critic.forward_cached(&states)?;
            let mut grad = Array2::zeros((n, 1));
            let mut mse = 0.0;
            for i in 0..n {
                let e = pass.output[[i, 0]] - returns[i];
                mse += e * e;
                grad[[i, 0]] = 2.0 * e / nf;
            }
            stats.critic_loss = mse / nf;
            if !stats.critic_loss.is_finite() {
                return Err(Error::NonFinite("critic loss".into()));
            }
            let g = self.critic.backward(&pass, &grad)?;
            self.critic_opt.step(&mut self.critic, &g)?;
        }
        self.buffer.clear();
        Ok(stats)
    }

    pub fn checkpoint(&self) -> PpoCheckpoint {
        PpoCheckpoint {
            config: self.config.clone(),
            stddev: self.stddev,
            actor: NetworkCheckpoint::capture(&self.actor, Some(&self.actor_opt)),
            critic: NetworkCheckpoint::capture(&self.critic, Some(&self.critic_opt)),
        }
    }

    pub fn from_checkpoint(ckpt: &PpoCheckpoint) -> Result<Self> {
        ckpt.config.validate()?;
        let actor = ckpt.actor.network()?;
        let critic = ckpt.critic.network()?;
        if actor.input_dim() != critic.input_dim() || actor.output_dim() != 1 || critic.output_dim() != 1
        {
            return Err(Error::Checkpoint("actor/critic shapes incompatible".into()));
        }
        if actor.head() != Head::Tanh {
            return Err(Error::Checkpoint("actor head must be tanh".into()));
        }
        let actor_opt = ckpt.actor.optimizer_for(&actor)?;
        let critic_opt = ckpt.critic.optimizer_for(&critic)?;
        let mut agent = Self::from_parts(ckpt.config.clone(), actor, critic, actor_opt, critic_opt);
        agent.set_stddev(ckpt.stddev)?;
        Ok(agent)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PpoCheckpoint {
    pub config: PpoConfig,
    pub stddev: f64,
    pub actor: NetworkCheckpoint,
    pub critic: NetworkCheckpoint,
}
