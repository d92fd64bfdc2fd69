//! Discrete scaling agent: epsilon-greedy Q-learning over {decrease, hold, increase}
//! with experience replay and a soft-updated target network.

use std::collections::VecDeque;

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Adam, AdamConfig, Head, Mlp, NetworkCheckpoint};

pub const NUM_ACTIONS: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DqnConfig {
    pub hidden: Vec<usize>,
    pub learning_rate: f64,
    pub gamma: f64,
    pub buffer_capacity: usize,
    pub batch_size: usize,
    pub tau: f64,
    pub epsilon_start: f64,
    pub epsilon_decay: f64,
    pub epsilon_min: f64,
    pub step_mc: i64,
}

impl Default for DqnConfig {
    fn default() -> Self {
        Self {
            hidden: vec![64, 128, 64],
            learning_rate: 1e-4,
            gamma: 0.99,
            buffer_capacity: 1000,
            batch_size: 128,
            tau: 0.005,
            epsilon_start: 1.0,
            epsilon_decay: 0.95,
            epsilon_min: 0.05,
            step_mc: 25,
        }
    }
}

impl DqnConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = !self.hidden.is_empty()
            && self.hidden.iter().all(|&h| h > 0)
            && self.learning_rate > 0.0
            && (0.0..=1.0).contains(&self.gamma)
            && self.batch_size > 0
            && self.buffer_capacity >= self.batch_size
            && (0.0..=1.0).contains(&self.tau)
            && (0.0..=1.0).contains(&self.epsilon_min)
            && self.epsilon_min <= self.epsilon_start
            && self.epsilon_start <= 1.0
            && self.epsilon_decay > 0.0
            && self.epsilon_decay <= 1.0
            && self.step_mc > 0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid DQN config {self:?}")))
        }
    }

    /// Epsilon after `episode` completed episodes.
    pub fn epsilon_at(&self, episode: u64) -> f64 {
        let e = self.epsilon_start * self.epsilon_decay.powf(episode as f64);
        e.max(self.epsilon_min)
    }

    /// Maps an action index to a limit change in millicores.
    pub fn action_delta(&self, action: usize) -> i64 {
        match action {
            0 => -self.step_mc,
            1 => 0,
            _ => self.step_mc,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: usize,
    pub reward: f64,
    pub next_state: Vec<f64>,
}

/// FIFO-evicting experience store.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayBuffer {
    capacity: usize,
    items: VecDeque<Transition>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity,
            items: VecDeque::with_capacity(capacity),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn push(&mut self, t: Transition) {
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(t);
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.items.iter()
    }

    /// Uniform sample of `n` distinct entries, or `None` if fewer are stored.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Option<Vec<&Transition>> {
        if self.items.len() < n {
            return None;
        }
        Some(
            rand::seq::index::sample(rng, self.items.len(), n)
                .into_iter()
                .map(|i| &self.items[i])
                .collect(),
        )
    }
}

#[derive(Debug, Clone)]
pub struct DqnAgent {
    config: DqnConfig,
    q: Mlp,
    target: Mlp,
    optimizer: Adam,
    buffer: ReplayBuffer,
    epsilon: f64,
}

/// Index of the largest value; ties resolve to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

impl DqnAgent {
    pub fn new<R: Rng + ?Sized>(config: DqnConfig, input_dim: usize, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let mut dims = vec![input_dim];
        dims.extend(&config.hidden);
        dims.push(NUM_ACTIONS);
        let q = Mlp::new(&dims, Head::Linear, rng)?;
        Ok(Self::from_parts(config, q.clone(), q, None))
    }

    fn from_parts(config: DqnConfig, q: Mlp, target: Mlp, optimizer: Option<Adam>) -> Self {
        let optimizer =
            optimizer.unwrap_or_else(|| Adam::new(AdamConfig::with_lr(config.learning_rate), &q));
        Self {
            buffer: ReplayBuffer::new(config.buffer_capacity),
            epsilon: config.epsilon_start,
            config,
            q,
            target,
            optimizer,
        }
    }

    pub fn config(&self) -> &DqnConfig {
        &self.config
    }

    pub fn q_network(&self) -> &Mlp {
        &self.q
    }

    pub fn q_network_mut(&mut self) -> &mut Mlp {
        &mut self.q
    }

    pub fn target_network(&self) -> &Mlp {
        &self.target
    }

    pub fn buffer(&self) -> &ReplayBuffer {
        &self.buffer
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn set_epsilon(&mut self, epsilon: f64) {
        self.epsilon = epsilon.clamp(0.0, 1.0);
    }

    pub fn input_dim(&self) -> usize {
        self.q.input_dim()
    }

    pub fn q_values(&self, state: &[f64]) -> Result<Vec<f64>> {
        self.q.forward(state)
    }

    /// Epsilon-greedy when `explore`, greedy otherwise.
    pub fn select_action<R: Rng + ?Sized>(
        &self,
        state: &[f64],
        explore: bool,
        rng: &mut R,
    ) -> Result<usize> {
        if explore && rng.random::<f64>() < self.epsilon {
            return Ok(rng.random_range(0..NUM_ACTIONS));
        }
        let q = self.q_values(state)?;
        if q.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("Q-values".into()));
        }
        Ok(argmax(&q))
    }

    pub fn remember(&mut self, t: Transition) -> Result<()> {
        let d = self.input_dim();
        for len in [t.state.len(), t.next_state.len()] {
            if len != d {
                return Err(Error::Shape {
                    context: "transition",
                    expected: d,
                    actual: len,
                });
            }
        }
        if t.action >= NUM_ACTIONS {
            return Err(Error::Shape {
                context: "action index",
                expected: NUM_ACTIONS,
                actual: t.action,
            });
        }
        if !t.reward.is_finite() {
            return Err(Error::NonFinite("reward".into()));
        }
        self.buffer.push(t);
        Ok(())
    }

    /// Samples a batch and learns from it. Returns `None` while the buffer holds
    /// fewer than `batch_size` transitions.
    pub fn learn<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<Option<f64>> {
        let batch: Vec<Transition> = match self.buffer.sample(self.config.batch_size, rng) {
            Some(b) => b.into_iter().cloned().collect(),
            None => return Ok(None),
        };
        let refs: Vec<&Transition> = batch.iter().collect();
        self.learn_on_batch(&refs).map(Some)
    }

    /// One optimizer step on the mean squared Bellman error of `batch`, followed by
    /// a soft target update. Returns the loss before the step.
    pub fn learn_on_batch(&mut self, batch: &[&Transition]) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::Usage("empty batch".into()));
        }
        let n = batch.len();
        let d = self.input_dim();
        let states = stack(batch.iter().map(|t| t.state.as_slice()), n, d)?;
        let next = stack(batch.iter().map(|t| t.next_state.as_slice()), n, d)?;
        let next_q = self.target.forward_batch(&next)?;
        let pass = self.q.forward_cached(&states)?;
        let mut grad = Array2::zeros((n, NUM_ACTIONS));
        let mut loss = 0.0;
        for (j, t) in batch.iter().enumerate() {
            let row = next_q.row(j);
            let max_next = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let y = t.reward + self.config.gamma * max_next;
            let residual = pass.output[[j, t.action]] - y;
            loss += residual * residual;
            grad[[j, t.action]] = 2.0 * residual / n as f64;
        }
        loss /= n as f64;
        if !loss.is_finite() {
            return Err(Error::NonFinite("DQN loss".into()));
        }
        let grads = self.q.backward(&pass, &grad)?;
        self.optimizer.step(&mut self.q, &grads)?;
        self.target.soft_update_from(&self.q, self.config.tau)?;
        Ok(loss)
    }

    /// Sets epsilon from the schedule for `episode` and returns it.
    pub fn decay_epsilon(&mut self, episode: u64) -> f64 {
        self.epsilon = self.config.epsilon_at(episode);
        self.epsilon
    }

    pub fn action_delta(&self, action: usize) -> i64 {
        self.config.action_delta(action)
    }

    pub fn checkpoint(&self) -> DqnCheckpoint {
        DqnCheckpoint {
            config: self.config.clone(),
            epsilon: self.epsilon,
            q_network: NetworkCheckpoint::capture(&self.q, Some(&self.optimizer)),
            target_network: NetworkCheckpoint::capture(&self.target, None),
        }
    }

    pub fn from_checkpoint(ckpt: &DqnCheckpoint) -> Result<Self> {
        ckpt.config.validate()?;
        let q = ckpt.q_network.network()?;
        let target = ckpt.target_network.network()?;
        if q.layer_dims() != target.layer_dims() {
            return Err(Error::Checkpoint("Q and target shapes differ".into()));
        }
        if q.output_dim() != NUM_ACTIONS {
            return Err(Error::Checkpoint("Q-network must have 3 outputs".into()));
        }
        let optimizer = ckpt.q_network.optimizer_for(&q)?;
        let mut agent = Self::from_parts(ckpt.config.clone(), q, target, optimizer);
        agent.epsilon = ckpt.epsilon;
        Ok(agent)
    }
}

pub(crate) fn stack<'a>(
    rows: impl Iterator<Item = &'a [f64]>,
    n: usize,
    d: usize,
) -> Result<Array2<f64>> {
    let mut flat = Vec::with_capacity(n * d);
    for r in rows {
        if r.len() != d {
            return Err(Error::Shape {
                context: "batch row",
                expected: d,
                actual: r.len(),
            });
        }
        flat.extend_from_slice(r);
    }
    Array2::from_shape_vec((n, d), flat).map_err(|_| Error::Shape {
        context: "batch",
        expected: n * d,
        actual: 0,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DqnCheckpoint {
    pub config: DqnConfig,
    pub epsilon: f64,
    pub q_network: NetworkCheckpoint,
    pub target_network: NetworkCheckpoint,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Dense;
    use ndarray::{Array1, Array2};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn agent(config: DqnConfig, dim: usize, seed: u64) -> DqnAgent {
        DqnAgent::new(config, dim, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
    }

    /// Agent whose Q-network outputs the constant vector `q` for every input.
    fn constant_q(q: [f64; 3]) -> DqnAgent {
        let mut a = agent(DqnConfig::default(), 2, 0);
        let net = Mlp::from_layers(
            vec![Dense {
                weights: Array2::zeros((2, 3)),
                bias: Array1::from(q.to_vec()),
            }],
            Head::Linear,
        )
        .unwrap();
        a.optimizer = Adam::new(AdamConfig::with_lr(1e-4), &net);
        a.q = net.clone();
        a.target = net;
        a
    }

    fn transition(dim: usize, tag: f64) -> Transition {
        Transition {
            state: vec![tag; dim],
            action: 1,
            reward: tag,
            next_state: vec![tag; dim],
        }
    }

    #[test]
    fn greedy_action_is_argmax() {
        let mut a = constant_q([0.1, 0.9, 0.3]);
        a.set_epsilon(0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(a.select_action(&[0.0, 0.0], true, &mut rng).unwrap(), 1);
    }

    #[test]
    fn ties_break_to_lowest_index() {
        let a = constant_q([0.5, 0.5, 0.1]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(a.select_action(&[0.0, 0.0], false, &mut rng).unwrap(), 0);
    }

    #[test]
    fn explore_false_ignores_epsilon() {
        let mut a = constant_q([0.0, 0.0, 1.0]);
        a.set_epsilon(1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..100 {
            assert_eq!(a.select_action(&[0.0, 0.0], false, &mut rng).unwrap(), 2);
        }
    }

    #[test]
    fn epsilon_schedule() {
        let cfg = DqnConfig::default();
        assert_eq!(cfg.epsilon_at(0), 1.0);
        assert!((cfg.epsilon_at(10) - 0.5987).abs() < 1e-4);
        assert_eq!(cfg.epsilon_at(1000), 0.05);
        let mut last = 1.0;
        for e in 0..200 {
            let v = cfg.epsilon_at(e);
            assert!(v <= last);
            last = v;
        }
    }

    #[test]
    fn action_delta_mapping() {
        let cfg = DqnConfig::default();
        assert_eq!(cfg.action_delta(0), -25);
        assert_eq!(cfg.action_delta(1), 0);
        assert_eq!(cfg.action_delta(2), 25);
    }

    #[test]
    fn replay_buffer_evicts_oldest() {
        let mut b = ReplayBuffer::new(3);
        for i in 0..5 {
            b.push(transition(1, i as f64));
        }
        let tags: Vec<f64> = b.iter().map(|t| t.reward).collect();
        assert_eq!(tags, vec![2.0, 3.0, 4.0]);
    }

    #[test]
    fn sample_without_replacement() {
        let mut b = ReplayBuffer::new(50);
        for i in 0..50 {
            b.push(transition(1, i as f64));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = b.sample(50, &mut rng).unwrap();
        let mut tags: Vec<i64> = s.iter().map(|t| t.reward as i64).collect();
        tags.sort();
        assert_eq!(tags, (0..50).collect::<Vec<_>>());
        assert!(b.sample(51, &mut rng).is_none());
    }

    #[test]
    fn learn_is_noop_when_underfull() {
        let mut a = agent(
            DqnConfig {
                batch_size: 4,
                buffer_capacity: 8,
                ..DqnConfig::default()
            },
            2,
            0,
        );
        for i in 0..3 {
            a.remember(transition(2, i as f64)).unwrap();
        }
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(a.learn(&mut rng).unwrap(), None);
        a.remember(transition(2, 3.0)).unwrap();
        assert!(a.learn(&mut rng).unwrap().is_some());
    }

    #[test]
    fn gamma_zero_loss_is_residual_squared() {
        let mut a = constant_q([0.0; 3]);
        a.config.gamma = 0.0;
        let ts: Vec<Transition> = (0..8)
            .map(|i| Transition {
                state: vec![0.1 * i as f64, 0.0],
                action: i % 3,
                reward: 1.0,
                next_state: vec![0.0, 0.5],
            })
            .collect();
        let refs: Vec<&Transition> = ts.iter().collect();
        assert_eq!(a.learn_on_batch(&refs).unwrap(), 1.0);
    }

    #[test]
    fn soft_update_extremes() {
        for (tau, expect_copy) in [(1.0, true), (0.0, false)] {
            let mut a = agent(
                DqnConfig {
                    tau,
                    ..DqnConfig::default()
                },
                4,
                5,
            );
            // Perturb the target so "unchanged" and "copied" are distinguishable.
            let mut shifted = a.target.flatten();
            shifted.iter_mut().for_each(|v| *v += 0.25);
            a.target.load_flat(&shifted).unwrap();
            let before = a.target.clone();
            let t = Transition {
                state: vec![0.3; 4],
                action: 2,
                reward: 1.0,
                next_state: vec![0.1; 4],
            };
            a.learn_on_batch(&[&t]).unwrap();
            if expect_copy {
                assert_eq!(a.target, a.q);
            } else {
                assert_eq!(a.target, before);
            }
        }
    }

    #[test]
    fn repeated_batch_reduces_loss() {
        let mut a = agent(
            DqnConfig {
                learning_rate: 1e-3,
                tau: 0.0,
                ..DqnConfig::default()
            },
            4,
            7,
        );
        let ts: Vec<Transition> = (0..16)
            .map(|i| Transition {
                state: vec![(i as f64 * 0.3).sin(); 4],
                action: i % 3,
                reward: (i as f64 * 0.7).cos(),
                next_state: vec![(i as f64 * 0.5).cos(); 4],
            })
            .collect();
        let refs: Vec<&Transition> = ts.iter().collect();
        let first = a.learn_on_batch(&refs).unwrap();
        let mut last = first;
        for _ in 0..300 {
            last = a.learn_on_batch(&refs).unwrap();
        }
        assert!(last < first * 0.1, "{first} -> {last}");
    }

    #[test]
    fn remember_rejects_bad_shapes() {
        let mut a = agent(DqnConfig::default(), 4, 0);
        assert!(a.remember(transition(3, 0.0)).is_err());
        let mut t = transition(4, 0.0);
        t.action = 3;
        assert!(a.remember(t).is_err());
    }

    #[test]
    fn checkpoint_roundtrip() {
        let mut a = agent(DqnConfig::default(), 4, 9);
        a.decay_epsilon(3);
        let t = transition(4, 0.5);
        a.learn_on_batch(&[&t]).unwrap();
        let json = serde_json::to_string(&a.checkpoint()).unwrap();
        let ckpt: DqnCheckpoint = serde_json::from_str(&json).unwrap();
        let b = DqnAgent::from_checkpoint(&ckpt).unwrap();
        assert_eq!(b.q, a.q);
        assert_eq!(b.target, a.target);
        assert_eq!(b.optimizer, a.optimizer);
        assert_eq!(b.epsilon, a.epsilon);
    }
}
