//! Multi-agent control loop.
//!
//! Every tick runs in a fixed phase order: all agents observe the pre-action
//! state, all choose actions, deltas are applied one agent at a time with
//! clamping, the cluster advances, rewards are computed from the resulting
//! state, transitions are stored and learning hooks fire.

use std::collections::BTreeMap;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dqn::{DqnAgent, DqnCheckpoint, DqnConfig, Transition};
use crate::error::{Error, Result};
use crate::heuristic::{HeuristicConfig, HeuristicController};
use crate::observe::{self, HistoryBuffer, Normalization, Observation, NUM_VARIABLES};
use crate::ppo::{PpoAgent, PpoCheckpoint, PpoConfig, RolloutRecord};
use crate::reward::{self, RewardParams};
use crate::scenario::{ArrivalNoise, Scenario};
use crate::sim::{Cluster, ClusterConfig, ServiceId, ServiceSpec};
use crate::workload::{SyntheticLoad, TraceEventKind, WorkloadTrace};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    Heuristic,
    Discrete,
    Continuous,
}

impl PolicyKind {
    pub fn name(self) -> &'static str {
        match self {
            PolicyKind::Heuristic => "heuristic",
            PolicyKind::Discrete => "discrete",
            PolicyKind::Continuous => "continuous",
        }
    }

    pub fn is_learning(self) -> bool {
        self != PolicyKind::Heuristic
    }
}

impl std::str::FromStr for PolicyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "heuristic" => Ok(PolicyKind::Heuristic),
            "discrete" => Ok(PolicyKind::Discrete),
            "continuous" => Ok(PolicyKind::Continuous),
            other => Err(Error::Config(format!("unknown policy '{other}'"))),
        }
    }
}

/// Order in which requested deltas are applied within a tick.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentOrder {
    #[default]
    Ascending,
    /// A fresh seeded permutation every tick.
    Shuffled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingConfig {
    pub num_services: usize,
    pub work_per_request_mcs: f64,
    /// Upper bound of the per-service synthetic rate. `None` picks the rate at
    /// which all services together demand the whole pool.
    pub max_rate: Option<f64>,
    pub min_segment_ticks: u64,
    pub max_segment_ticks: u64,
    /// Draw every service's priority uniformly from `0..=max_priority` per episode.
    pub random_priorities: bool,
    /// Start each episode from a random allocation leaving part of the pool
    /// free, instead of an equal split of the whole pool.
    pub random_initial_limits: bool,
    pub poisson_arrivals: bool,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            num_services: 3,
            work_per_request_mcs: 8.0,
            max_rate: None,
            min_segment_ticks: 3,
            max_segment_ticks: 10,
            random_priorities: true,
            random_initial_limits: true,
            poisson_arrivals: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EngineConfig {
    pub policy: PolicyKind,
    pub episodes: u64,
    pub ticks_per_episode: u64,
    pub seed: u64,
    pub agent_order: AgentOrder,
    pub history_depth: usize,
    pub max_priority: u32,
    pub cluster: ClusterConfig,
    pub reward: RewardParams,
    pub heuristic: HeuristicConfig,
    pub dqn: DqnConfig,
    pub ppo: PpoConfig,
    pub training: TrainingConfig,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            policy: PolicyKind::Heuristic,
            episodes: 150,
            ticks_per_episode: 64,
            seed: 0,
            agent_order: AgentOrder::Ascending,
            history_depth: 5,
            max_priority: 2,
            cluster: ClusterConfig::default(),
            reward: RewardParams::default(),
            heuristic: HeuristicConfig::default(),
            dqn: DqnConfig::default(),
            ppo: PpoConfig::default(),
            training: TrainingConfig::default(),
        }
    }
}

impl EngineConfig {
    pub fn for_policy(policy: PolicyKind) -> Self {
        Self {
            policy,
            ..Self::default()
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        Ok(toml::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.episodes == 0 || self.ticks_per_episode == 0 {
            return Err(Error::Config("episodes and ticks_per_episode must be positive".into()));
        }
        if self.history_depth == 0 {
            return Err(Error::Config("history_depth must be positive".into()));
        }
        self.cluster.validate()?;
        self.reward.validate()?;
        self.heuristic.validate()?;
        self.dqn.validate()?;
        self.ppo.validate()?;
        let t = &self.training;
        if t.num_services == 0
            || t.num_services > self.cluster.max_services()
            || !(t.work_per_request_mcs > 0.0)
            || t.max_rate.is_some_and(|r| !(r >= 0.0))
        {
            return Err(Error::Config(format!("invalid training config {t:?}")));
        }
        self.synthetic_load().validate()
    }

    pub fn input_dim(&self) -> usize {
        NUM_VARIABLES * self.history_depth
    }

    /// Rate bound used for synthetic training load.
    pub fn training_max_rate(&self) -> f64 {
        let t = &self.training;
        t.max_rate.unwrap_or_else(|| {
            self.cluster.capacity_mc as f64 / (t.num_services as f64 * t.work_per_request_mcs)
        })
    }

    pub fn synthetic_load(&self) -> SyntheticLoad {
        SyntheticLoad {
            max_rate: self.training_max_rate(),
            min_segment_ticks: self.training.min_segment_ticks,
            max_segment_ticks: self.training.max_segment_ticks,
        }
    }

    /// Hash of everything that determines a trained model's shape and meaning.
    /// Seeds, episode counts and training load do not contribute.
    pub fn model_hash(&self) -> String {
        let policy_params = match self.policy {
            PolicyKind::Heuristic => serde_json::to_value(&self.heuristic),
            PolicyKind::Discrete => serde_json::to_value(&self.dqn),
            PolicyKind::Continuous => serde_json::to_value(&self.ppo),
        }
        .expect("config serializes");
        let doc = serde_json::json!({
            "policy": self.policy,
            "history_depth": self.history_depth,
            "max_priority": self.max_priority,
            "reward": self.reward,
            "params": policy_params,
        });
        hex::encode(Sha256::digest(doc.to_string().as_bytes()))
    }

    fn normalization(&self, capacity_mc: i64) -> Normalization {
        Normalization {
            capacity_mc: capacity_mc as f64,
            max_priority: self.max_priority,
        }
    }
}

/// A stream of the root seed. Stream 0 drives workload and ordering; the k-th
/// attached agent initializes its networks from stream `1 + 2k` and samples
/// actions from stream `2 + 2k`.
pub fn seeded_stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Serialized learning agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AgentModel {
    Discrete(DqnCheckpoint),
    Continuous(PpoCheckpoint),
}

#[derive(Debug, Clone)]
pub enum Controller {
    Heuristic(HeuristicController),
    Discrete(Box<DqnAgent>),
    Continuous(Box<PpoAgent>),
}

impl Controller {
    pub fn fresh(config: &EngineConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        Ok(match config.policy {
            PolicyKind::Heuristic => Controller::Heuristic(HeuristicController::new()),
            PolicyKind::Discrete => Controller::Discrete(Box::new(DqnAgent::new(
                config.dqn.clone(),
                config.input_dim(),
                rng,
            )?)),
            PolicyKind::Continuous => Controller::Continuous(Box::new(PpoAgent::new(
                config.ppo.clone(),
                config.input_dim(),
                rng,
            )?)),
        })
    }

    pub fn from_model(model: &AgentModel, input_dim: usize) -> Result<Self> {
        let c = match model {
            AgentModel::Discrete(c) => Controller::Discrete(Box::new(DqnAgent::from_checkpoint(c)?)),
            AgentModel::Continuous(c) => {
                Controller::Continuous(Box::new(PpoAgent::from_checkpoint(c)?))
            }
        };
        let dim = match &c {
            Controller::Discrete(a) => a.input_dim(),
            Controller::Continuous(a) => a.input_dim(),
            Controller::Heuristic(_) => input_dim,
        };
        if dim != input_dim {
            return Err(Error::Checkpoint(format!(
                "model expects {dim} inputs, configuration produces {input_dim}"
            )));
        }
        Ok(c)
    }

    pub fn model(&self) -> Option<AgentModel> {
        match self {
            Controller::Heuristic(_) => None,
            Controller::Discrete(a) => Some(AgentModel::Discrete(a.checkpoint())),
            Controller::Continuous(a) => Some(AgentModel::Continuous(a.checkpoint())),
        }
    }

    pub fn kind(&self) -> PolicyKind {
        match self {
            Controller::Heuristic(_) => PolicyKind::Heuristic,
            Controller::Discrete(_) => PolicyKind::Discrete,
            Controller::Continuous(_) => PolicyKind::Continuous,
        }
    }
}

/// Whether agents explore and learn during a tick.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Mode {
    pub explore: bool,
    pub learn: bool,
}

impl Mode {
    pub const TRAIN: Mode = Mode {
        explore: true,
        learn: true,
    };
    pub const EVAL: Mode = Mode {
        explore: false,
        learn: false,
    };
}

#[derive(Debug, Clone)]
struct AgentSlot {
    controller: Controller,
    history: HistoryBuffer,
    rng: ChaCha8Rng,
}

enum Decision {
    Hold,
    Discrete(usize),
    Continuous(crate::ppo::ActionSample),
}

/// One row of an episode log: one service during one tick.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TickRecord {
    pub episode: u64,
    pub tick: u64,
    pub service: u32,
    pub priority: u32,
    pub rate: f64,
    pub limit_mc: i64,
    pub usage_mc: f64,
    pub utilization_pct: f64,
    pub response_s: f64,
    pub backlog_mcs: f64,
    /// Discrete action index, continuous action value, or heuristic step sign.
    pub action: f64,
    pub requested_delta_mc: i64,
    pub applied_delta_mc: i64,
    /// Capacity taken from this service to make room for a newly added one.
    pub reclaimed_mc: i64,
    pub rho: f64,
    pub omega: f64,
    pub r_shared: f64,
    pub reward: f64,
}

impl TickRecord {
    fn check_finite(&self) -> Result<()> {
        let fields = [
            ("rate", self.rate),
            ("usage_mc", self.usage_mc),
            ("utilization_pct", self.utilization_pct),
            ("response_s", self.response_s),
            ("backlog_mcs", self.backlog_mcs),
            ("action", self.action),
            ("rho", self.rho),
            ("omega", self.omega),
            ("r_shared", self.r_shared),
            ("reward", self.reward),
        ];
        match fields.iter().find(|(_, v)| !v.is_finite()) {
            Some((name, v)) => Err(Error::NonFinite(format!(
                "{name} = {v} for service {} at episode {} tick {}",
                self.service, self.episode, self.tick
            ))),
            None => Ok(()),
        }
    }
}

/// Append-only per-tick, per-service records.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLog {
    pub records: Vec<TickRecord>,
}

impl EpisodeLog {
    pub fn extend(&mut self, records: impl IntoIterator<Item = TickRecord>) {
        self.records.extend(records);
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn for_service(&self, id: u32) -> impl Iterator<Item = &TickRecord> {
        self.records.iter().filter(move |r| r.service == id)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        for r in &self.records {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(reader);
        let records = r.deserialize().collect::<std::result::Result<Vec<TickRecord>, _>>()?;
        Ok(Self { records })
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        self.write_csv(fs::File::create(path)?)
    }
}

/// Multi-agent engine over one cluster.
#[derive(Debug, Clone)]
pub struct Engine {
    config: EngineConfig,
    cluster: Cluster,
    norm: Normalization,
    agents: BTreeMap<ServiceId, AgentSlot>,
    /// Warm-start models for agents attached later, by attach ordinal.
    pool: Vec<AgentModel>,
    attached: u64,
    pending_reclaim: BTreeMap<ServiceId, i64>,
    rng: ChaCha8Rng,
    seed: u64,
    episode: u64,
    tick: u64,
}

impl Engine {
    /// An engine with an empty cluster. Learning agents attached later get
    /// fresh networks unless `pool` supplies warm-start models.
    pub fn new(
        config: EngineConfig,
        cluster_config: ClusterConfig,
        pool: Vec<AgentModel>,
        seed: u64,
    ) -> Result<Self> {
        config.validate()?;
        cluster_config.validate()?;
        for m in &pool {
            let kind = match m {
                AgentModel::Discrete(_) => PolicyKind::Discrete,
                AgentModel::Continuous(_) => PolicyKind::Continuous,
            };
            if kind != config.policy {
                return Err(Error::Checkpoint(format!(
                    "{} model supplied to a {} engine",
                    kind.name(),
                    config.policy.name()
                )));
            }
        }
        let norm = config.normalization(cluster_config.capacity_mc);
        Ok(Self {
            cluster: Cluster::new(cluster_config)?,
            norm,
            config,
            agents: BTreeMap::new(),
            pool,
            attached: 0,
            pending_reclaim: BTreeMap::new(),
            rng: seeded_stream(seed, 0),
            seed,
            episode: 0,
            tick: 0,
        })
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn cluster(&self) -> &Cluster {
        &self.cluster
    }

    pub fn agent_ids(&self) -> Vec<ServiceId> {
        self.agents.keys().copied().collect()
    }

    pub fn controller(&self, id: ServiceId) -> Option<&Controller> {
        self.agents.get(&id).map(|s| &s.controller)
    }

    pub fn controller_mut(&mut self, id: ServiceId) -> Option<&mut Controller> {
        self.agents.get_mut(&id).map(|s| &mut s.controller)
    }

    pub fn tick(&self) -> u64 {
        self.tick
    }

    pub fn episode(&self) -> u64 {
        self.episode
    }

    pub fn workload_rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    /// Adds a service and its agent. If the pool cannot hold the starting
    /// limit (the floor unless `initial_limit_mc` says otherwise), existing
    /// limits are shaved proportionally first. Returns the new agent's id.
    pub fn attach_agent(
        &mut self,
        spec: ServiceSpec,
        initial_limit_mc: Option<i64>,
        warm_start: Option<&AgentModel>,
    ) -> Result<ServiceId> {
        let id = spec.id;
        if self.agents.contains_key(&id) || self.cluster.service(id).is_some() {
            return Err(Error::DuplicateService(id));
        }
        let limit = initial_limit_mc.unwrap_or(self.cluster.config().min_limit_mc);
        let ordinal = self.attached;
        let controller = match warm_start.or_else(|| self.pool_model(ordinal)) {
            Some(model) => Controller::from_model(model, self.config.input_dim())?,
            None => {
                let mut init_rng = seeded_stream(self.seed, 1 + 2 * ordinal);
                Controller::fresh(&self.config, &mut init_rng)?
            }
        };
        if controller.kind() != self.config.policy {
            return Err(Error::Checkpoint("warm-start model has the wrong policy kind".into()));
        }
        let taken = self.cluster.reclaim_proportional(limit)?;
        self.cluster.add_service_at(spec, limit)?;
        for (sid, mc) in taken {
            *self.pending_reclaim.entry(sid).or_default() += mc;
        }
        self.agents.insert(
            id,
            AgentSlot {
                controller,
                history: HistoryBuffer::new(self.config.history_depth),
                rng: seeded_stream(self.seed, 2 + 2 * ordinal),
            },
        );
        self.attached += 1;
        Ok(id)
    }

    fn pool_model(&self, ordinal: u64) -> Option<&AgentModel> {
        if self.pool.is_empty() {
            None
        } else {
            self.pool.get((ordinal % self.pool.len() as u64) as usize)
        }
    }

    /// Removes a service and drops its agent. Returns the released limit.
    pub fn detach_agent(&mut self, id: ServiceId) -> Result<i64> {
        if self.agents.remove(&id).is_none() {
            return Err(Error::UnknownService(id));
        }
        self.pending_reclaim.remove(&id);
        self.cluster.remove_service(id)
    }

    /// Replaces the cluster with a fresh one holding the same agents, used at
    /// episode boundaries during training. Histories are cleared.
    fn reset_cluster(&mut self, services: &[(ServiceSpec, i64)]) -> Result<()> {
        let mut cluster = Cluster::new(self.cluster.config().clone())?;
        for (spec, limit) in services {
            cluster.add_service_at(spec.clone(), *limit)?;
        }
        self.cluster = cluster;
        for slot in self.agents.values_mut() {
            slot.history.clear();
        }
        self.pending_reclaim.clear();
        self.tick = 0;
        Ok(())
    }

    /// Applies trace events scheduled for the current tick.
    pub fn apply_events(&mut self, trace: &WorkloadTrace) -> Result<()> {
        let events: Vec<_> = trace.events_at(self.tick).cloned().collect();
        for e in events {
            match e.kind {
                TraceEventKind::Add {
                    spec,
                    initial_limit_mc,
                } => {
                    self.attach_agent(spec, initial_limit_mc, None)?;
                }
                TraceEventKind::Remove { id } => {
                    self.detach_agent(id)?;
                }
            }
        }
        Ok(())
    }

    /// Runs one tick with the given request rates (services without an entry
    /// get none; entries for inactive services are ignored).
    pub fn run_tick(&mut self, rates: &BTreeMap<ServiceId, f64>, mode: Mode) -> Result<Vec<TickRecord>> {
        let ids = self.agent_ids();

        // (1) observe the pre-action state.
        let mut observations = Vec::with_capacity(ids.len());
        let mut prev_util = Vec::with_capacity(ids.len());
        for id in &ids {
            let slot = self.agents.get_mut(id).expect("listed");
            let obs = observe::build_observation(&self.cluster, *id, &mut slot.history, &self.norm)?;
            observations.push(obs);
            prev_util.push(self.cluster.service(*id).expect("agent has service").utilization_pct());
        }

        // (2) choose actions.
        let mut decisions = Vec::with_capacity(ids.len());
        let mut requested = Vec::with_capacity(ids.len());
        for (i, id) in ids.iter().enumerate() {
            let slot = self.agents.get_mut(id).expect("listed");
            let (decision, delta) = match &mut slot.controller {
                Controller::Heuristic(h) => {
                    let d = h.decide(prev_util[i], self.tick, &self.config.heuristic);
                    (Decision::Hold, d)
                }
                Controller::Discrete(a) => {
                    let act = a.select_action(observations[i].as_slice(), mode.explore, &mut slot.rng)?;
                    (Decision::Discrete(act), a.action_delta(act))
                }
                Controller::Continuous(a) => {
                    let s = a.sample_action(observations[i].as_slice(), mode.explore, &mut slot.rng)?;
                    (Decision::Continuous(s), a.action_delta(s.action))
                }
            };
            decisions.push(decision);
            requested.push(delta);
        }

        // (3) apply deltas with clamping.
        let mut order: Vec<usize> = (0..ids.len()).collect();
        if self.config.agent_order == AgentOrder::Shuffled {
            order.shuffle(&mut self.rng);
        }
        let mut applied = vec![0i64; ids.len()];
        for i in order {
            applied[i] = self.cluster.resize_in_place(ids[i], requested[i])?;
        }

        // (4) advance the cluster.
        let active: BTreeMap<ServiceId, f64> = self
            .cluster
            .service_ids()
            .into_iter()
            .map(|id| (id, rates.get(&id).copied().unwrap_or(0.0)))
            .collect();
        let ticks = self.cluster.step(&active)?;
        let by_id: BTreeMap<ServiceId, _> = ticks.iter().map(|t| (t.id, t)).collect();

        // (5) shared and per-agent rewards.
        let omega = reward::weighted_response_time(
            self.cluster.services().map(|s| (s.priority, s.response_s)),
        );
        let mut records = Vec::with_capacity(ids.len());
        for (i, id) in ids.iter().enumerate() {
            let t = by_id[id];
            let svc = self.cluster.service(*id).expect("active");
            let b = reward::breakdown(t.utilization_pct, prev_util[i], omega, &self.config.reward);
            let action = match &decisions[i] {
                Decision::Hold => requested[i].signum() as f64,
                Decision::Discrete(a) => *a as f64,
                Decision::Continuous(s) => s.action,
            };
            let record = TickRecord {
                episode: self.episode,
                tick: self.tick,
                service: id.0,
                priority: svc.priority,
                rate: active[id],
                limit_mc: svc.limit_mc,
                usage_mc: t.usage_mc,
                utilization_pct: t.utilization_pct,
                response_s: t.response_s,
                backlog_mcs: svc.backlog_mcs(),
                action,
                requested_delta_mc: requested[i],
                applied_delta_mc: applied[i],
                reclaimed_mc: self.pending_reclaim.remove(id).unwrap_or(0),
                rho: b.rho,
                omega: b.omega,
                r_shared: b.r_shared,
                reward: b.r_total,
            };
            record.check_finite()?;
            records.push(record);
        }

        // (6) store transitions, (7) learn.
        if mode.learn {
            for (i, id) in ids.iter().enumerate() {
                let snap = observe::snapshot(&self.cluster, *id, &self.norm)?;
                let slot = self.agents.get_mut(id).expect("listed");
                let next: Observation = slot.history.peek_with(snap);
                let state = observations[i].as_slice().to_vec();
                let r = records[i].reward;
                match (&mut slot.controller, &decisions[i]) {
                    (Controller::Discrete(a), Decision::Discrete(act)) => {
                        a.remember(Transition {
                            state,
                            action: *act,
                            reward: r,
                            next_state: next.as_slice().to_vec(),
                        })?;
                        a.learn(&mut slot.rng)?;
                    }
                    (Controller::Continuous(a), Decision::Continuous(s)) => {
                        a.remember(RolloutRecord {
                            state,
                            action: s.action,
                            raw_action: s.raw,
                            log_prob: s.log_prob,
                            reward: r,
                            next_state: next.as_slice().to_vec(),
                            done: false,
                        })?;
                        a.update()?;
                    }
                    _ => {}
                }
            }
        }

        self.tick += 1;
        Ok(records)
    }

    /// Sets exploration for `episode` on every learning agent.
    fn set_exploration(&mut self, episode: u64) {
        for slot in self.agents.values_mut() {
            match &mut slot.controller {
                Controller::Discrete(a) => {
                    a.decay_epsilon(episode);
                }
                Controller::Continuous(a) => {
                    a.decay_stddev(episode);
                }
                Controller::Heuristic(_) => {}
            }
        }
    }

    fn end_episode(&mut self) {
        for slot in self.agents.values_mut() {
            if let Controller::Continuous(a) = &mut slot.controller {
                a.end_episode();
            }
        }
        self.episode += 1;
    }

    /// Models of all current agents in id order.
    pub fn models(&self) -> Vec<AgentModel> {
        self.agents.values().filter_map(|s| s.controller.model()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSummary {
    pub episode: u64,
    pub mean_reward: f64,
    pub mean_response_s: f64,
    pub violation_pct: f64,
    pub exploration: f64,
}

pub const MODEL_FORMAT_VERSION: u32 = 1;

/// A trained set of agents plus the metadata needed to use it safely.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModels {
    pub manifest: Manifest,
    pub agents: Vec<AgentModel>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub policy: PolicyKind,
    pub config_hash: String,
    pub seed: u64,
    pub episodes: u64,
    pub ticks_per_episode: u64,
    pub agent_files: Vec<String>,
    pub summaries: Vec<EpisodeSummary>,
}

impl TrainedModels {
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        for (file, agent) in self.manifest.agent_files.iter().zip(&self.agents) {
            fs::write(dir.join(file), serde_json::to_string_pretty(agent)?)?;
        }
        fs::write(
            dir.join("manifest.json"),
            serde_json::to_string_pretty(&self.manifest)?,
        )?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join("manifest.json");
        let text = fs::read_to_string(&path)
            .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
        let manifest: Manifest = serde_json::from_str(&text)?;
        if manifest.version != MODEL_FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported model format version {}",
                manifest.version
            )));
        }
        let agents = manifest
            .agent_files
            .iter()
            .map(|f| -> Result<AgentModel> {
                let p = dir.join(f);
                let text = fs::read_to_string(&p)
                    .map_err(|e| Error::Checkpoint(format!("{}: {e}", p.display())))?;
                Ok(serde_json::from_str(&text)?)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { manifest, agents })
    }

    /// Errors unless these models were trained under a compatible configuration.
    pub fn check_compatible(&self, config: &EngineConfig) -> Result<()> {
        if self.manifest.policy != config.policy {
            return Err(Error::Checkpoint(format!(
                "models are {}, configuration wants {}",
                self.manifest.policy.name(),
                config.policy.name()
            )));
        }
        let hash = config.model_hash();
        if self.manifest.config_hash != hash {
            return Err(Error::Checkpoint(format!(
                "config hash mismatch: models {} vs configuration {}",
                self.manifest.config_hash, hash
            )));
        }
        if self.agents.is_empty() {
            return Err(Error::Checkpoint("model set is empty".into()));
        }
        Ok(())
    }
}

fn training_services<R: Rng>(config: &EngineConfig, rng: &mut R) -> Vec<(ServiceSpec, i64)> {
    let n = config.training.num_services;
    let cap = config.cluster.capacity_mc;
    let floor = config.cluster.min_limit_mc;
    let limits: Vec<i64> = if config.training.random_initial_limits {
        // Between half and all of the headroom above the floors, split at random.
        let headroom = (cap - floor * n as i64) as f64 * rng.random_range(0.5..=1.0);
        let weights: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..1.0)).collect();
        let total: f64 = weights.iter().sum();
        weights
            .iter()
            .map(|w| floor + (headroom * w / total).floor() as i64)
            .collect()
    } else {
        let n = n as i64;
        (0..n).map(|i| cap / n + i64::from(i < cap % n)).collect()
    };
    limits
        .into_iter()
        .enumerate()
        .map(|(i, limit)| {
            let priority = if config.training.random_priorities {
                rng.random_range(0..=config.max_priority)
            } else {
                0
            };
            let spec = ServiceSpec {
                id: ServiceId(i as u32 + 1),
                priority,
                work_per_request_mcs: config.training.work_per_request_mcs,
            };
            (spec, limit)
        })
        .collect()
}

/// Trains one agent per training service for `config.episodes` episodes of
/// synthetic load. Heuristic configurations are rejected.
pub fn train(config: &EngineConfig) -> Result<TrainedModels> {
    train_with_progress(config, |_| {})
}

pub fn train_with_progress(
    config: &EngineConfig,
    mut progress: impl FnMut(&EpisodeSummary),
) -> Result<TrainedModels> {
    if !config.policy.is_learning() {
        return Err(Error::Config("the heuristic policy has nothing to train".into()));
    }
    config.validate()?;
    let mut engine = Engine::new(config.clone(), config.cluster.clone(), Vec::new(), config.seed)?;
    let load = config.synthetic_load();
    let horizon = config.ticks_per_episode;
    let mut summaries = Vec::with_capacity(config.episodes as usize);

    let mut first = true;
    for episode in 0..config.episodes {
        let services = training_services(config, &mut engine.rng);
        if first {
            for (spec, limit) in &services {
                engine.attach_agent(spec.clone(), Some(*limit), None)?;
            }
            first = false;
        }
        engine.reset_cluster(&services)?;
        engine.episode = episode;
        engine.set_exploration(episode);

        let mut trace = WorkloadTrace {
            horizon,
            rates: services
                .iter()
                .map(|(s, _)| (s.id, load.series(horizon, &mut engine.rng)))
                .collect(),
            events: Vec::new(),
        };
        if config.training.poisson_arrivals {
            trace = trace.with_poisson_arrivals(config.cluster.tick_seconds, &mut engine.rng);
        }

        let (mut reward_sum, mut resp_sum, mut violations, mut count) = (0.0, 0.0, 0u64, 0u64);
        for t in 0..horizon {
            let rates = services.iter().map(|(s, _)| (s.id, trace.rate(s.id, t))).collect();
            for r in engine.run_tick(&rates, Mode::TRAIN)? {
                reward_sum += r.reward;
                resp_sum += r.response_s;
                violations += u64::from(r.response_s > crate::kpi::VIOLATION_THRESHOLD_S);
                count += 1;
            }
        }
        let exploration = match engine.agents.values().next().map(|s| &s.controller) {
            Some(Controller::Discrete(a)) => a.epsilon(),
            Some(Controller::Continuous(a)) => a.stddev(),
            _ => 0.0,
        };
        engine.end_episode();
        let summary = EpisodeSummary {
            episode,
            mean_reward: reward_sum / count as f64,
            mean_response_s: resp_sum / count as f64,
            violation_pct: 100.0 * violations as f64 / count as f64,
            exploration,
        };
        progress(&summary);
        summaries.push(summary);
    }

    let agents = engine.models();
    Ok(TrainedModels {
        manifest: Manifest {
            version: MODEL_FORMAT_VERSION,
            policy: config.policy,
            config_hash: config.model_hash(),
            seed: config.seed,
            episodes: config.episodes,
            ticks_per_episode: config.ticks_per_episode,
            agent_files: (0..agents.len()).map(|i| format!("agent-{i}.json")).collect(),
            summaries,
        },
        agents,
    })
}

/// Runs `scenario` once with greedy policies. `seed` drives arrival noise only.
pub fn evaluate(
    config: &EngineConfig,
    models: Option<&TrainedModels>,
    scenario: &Scenario,
    seed: u64,
) -> Result<EpisodeLog> {
    scenario.validate()?;
    let pool = match (config.policy, models) {
        (PolicyKind::Heuristic, _) => Vec::new(),
        (_, Some(m)) => {
            m.check_compatible(config)?;
            m.agents.clone()
        }
        (p, None) => {
            return Err(Error::Checkpoint(format!(
                "the {} policy needs trained models",
                p.name()
            )))
        }
    };
    let mut engine = Engine::new(config.clone(), scenario.cluster_config(), pool, seed)?;
    let mut trace = scenario.to_trace();
    if scenario.arrival_noise == ArrivalNoise::Poisson {
        trace = trace.with_poisson_arrivals(scenario.tick_seconds, &mut engine.rng);
    }
    trace.validate()?;
    let mut log = EpisodeLog::default();
    for t in 0..scenario.horizon {
        engine.apply_events(&trace)?;
        let rates = trace.rates.keys().map(|&id| (id, trace.rate(id, t))).collect();
        log.extend(engine.run_tick(&rates, Mode::EVAL)?);
    }
    Ok(log)
}
