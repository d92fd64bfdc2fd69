//! Evaluation scenarios: cluster calibration, services, phased request rates and
//! reporting windows.
//!
//! Scenarios are stored as TOML. Example:
//!
//! ```toml
//! name = "load"
//! horizon = 22
//! capacity_mc = 1200
//! total_rate = 100.0          # phases below give percentage shares
//!
//! [[service]]
//! id = 1
//! priority = 0
//!
//! [[phase]]
//! start = 0
//! end = 7                     # inclusive
//! shares = [25.0, 8.5, 66.5]  # one entry per [[service]], in file order
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sim::{ClusterConfig, ServiceId, ServiceSpec};
use crate::workload::{TraceEvent, TraceEventKind, WorkloadTrace};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArrivalNoise {
    /// Rates are used exactly as written.
    None,
    /// Each tick's request count is drawn from a Poisson distribution.
    #[default]
    Poisson,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioService {
    pub id: u32,
    #[serde(default)]
    pub priority: u32,
    /// Starting limit. Services present at tick 0 without one share the capacity
    /// left by the others equally; services added later start at the floor.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_limit_mc: Option<i64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub add_tick: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub remove_tick: Option<u64>,
}

impl ScenarioService {
    fn present_at_start(&self) -> bool {
        self.add_tick.unwrap_or(0) == 0
    }
}

/// A run of ticks `[start, end]` with constant rates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Phase {
    pub start: u64,
    pub end: u64,
    /// Percentage of `total_rate` per service.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shares: Option<Vec<f64>>,
    /// Absolute requests per second per service.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rates: Option<Vec<f64>>,
}

/// A named tick range reported separately in KPI reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Window {
    pub name: String,
    pub start: u64,
    pub end: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    #[serde(default)]
    pub description: String,
    pub horizon: u64,
    pub capacity_mc: i64,
    #[serde(default = "default_min_limit")]
    pub min_limit_mc: i64,
    #[serde(default = "default_tick")]
    pub tick_seconds: u32,
    #[serde(default = "default_work")]
    pub work_per_request_mcs: f64,
    /// See [`ClusterConfig::request_timeout_s`].
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub request_timeout_s: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub total_rate: Option<f64>,
    #[serde(default)]
    pub arrival_noise: ArrivalNoise,
    #[serde(rename = "service")]
    pub services: Vec<ScenarioService>,
    #[serde(rename = "phase")]
    pub phases: Vec<Phase>,
    #[serde(rename = "window", default)]
    pub windows: Vec<Window>,
}

fn default_min_limit() -> i64 {
    25
}

fn default_tick() -> u32 {
    1
}

fn default_work() -> f64 {
    8.0
}

const SHARE_TOLERANCE: f64 = 1e-9;

impl Scenario {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let scenario: Scenario = toml::from_str(text)?;
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    /// Looks `name_or_path` up among the built-ins, then on disk.
    pub fn resolve(name_or_path: &str) -> Result<Self> {
        if let Some(s) = builtin(name_or_path) {
            return Ok(s);
        }
        let path = Path::new(name_or_path);
        if path.exists() {
            return Self::load(path);
        }
        Err(Error::Config(format!(
            "unknown scenario '{name_or_path}' (built-ins: {})",
            builtin_names().join(", ")
        )))
    }

    pub fn cluster_config(&self) -> ClusterConfig {
        ClusterConfig {
            capacity_mc: self.capacity_mc,
            min_limit_mc: self.min_limit_mc,
            tick_seconds: self.tick_seconds,
            request_timeout_s: self.request_timeout_s,
        }
    }

    pub fn service_ids(&self) -> Vec<ServiceId> {
        self.services.iter().map(|s| ServiceId(s.id)).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(format!("scenario '{}': {msg}", self.name)));
        self.cluster_config().validate()?;
        if self.horizon == 0 {
            return bad("horizon must be positive".into());
        }
        if !(self.work_per_request_mcs.is_finite() && self.work_per_request_mcs > 0.0) {
            return bad("work_per_request_mcs must be positive".into());
        }
        if self.services.is_empty() {
            return bad("no services".into());
        }
        let mut ids = BTreeSet::new();
        for s in &self.services {
            if !ids.insert(s.id) {
                return bad(format!("duplicate service id {}", s.id));
            }
            let add = s.add_tick.unwrap_or(0);
            if add >= self.horizon {
                return bad(format!("service {} added after the horizon", s.id));
            }
            if let Some(rm) = s.remove_tick {
                if rm <= add || rm > self.horizon {
                    return bad(format!("service {} has an invalid remove_tick", s.id));
                }
            }
            if let Some(limit) = s.initial_limit_mc {
                if limit < self.min_limit_mc {
                    return bad(format!("service {} starts below the floor", s.id));
                }
            }
        }
        let explicit: i64 = self
            .services
            .iter()
            .filter(|s| s.present_at_start())
            .filter_map(|s| s.initial_limit_mc)
            .sum();
        let implicit = self
            .services
            .iter()
            .filter(|s| s.present_at_start() && s.initial_limit_mc.is_none())
            .count() as i64;
        if explicit + implicit * self.min_limit_mc > self.capacity_mc {
            return bad("initial limits exceed capacity".into());
        }

        let mut next = 0;
        for (i, p) in self.phases.iter().enumerate() {
            if p.start != next || p.end < p.start {
                return bad(format!("phase {i} does not continue at tick {next}"));
            }
            next = p.end + 1;
            match (&p.shares, &p.rates) {
                (Some(shares), None) => {
                    if self.total_rate.is_none() {
                        return bad(format!("phase {i} uses shares without total_rate"));
                    }
                    if shares.len() != self.services.len() {
                        return bad(format!("phase {i} has {} shares", shares.len()));
                    }
                    let sum: f64 = shares.iter().sum();
                    if (sum - 100.0).abs() > SHARE_TOLERANCE || shares.iter().any(|s| *s < 0.0) {
                        return bad(format!("phase {i} shares sum to {sum}, not 100"));
                    }
                }
                (None, Some(rates)) => {
                    if rates.len() != self.services.len() {
                        return bad(format!("phase {i} has {} rates", rates.len()));
                    }
                    if rates.iter().any(|r| !(r.is_finite() && *r >= 0.0)) {
                        return bad(format!("phase {i} has a negative rate"));
                    }
                }
                _ => return bad(format!("phase {i} needs exactly one of shares or rates")),
            }
        }
        if next != self.horizon {
            return bad(format!("phases cover {next} ticks, horizon is {}", self.horizon));
        }
        for w in &self.windows {
            if w.end < w.start || w.end >= self.horizon {
                return bad(format!("window '{}' is outside the horizon", w.name));
            }
        }
        Ok(())
    }

    /// Request rate of every service during phase `index`.
    pub fn phase_rates(&self, index: usize) -> Vec<f64> {
        let p = &self.phases[index];
        match (&p.shares, &p.rates) {
            (Some(shares), _) => {
                let total = self.total_rate.unwrap_or(0.0);
                shares.iter().map(|s| total * s / 100.0).collect()
            }
            (None, Some(rates)) => rates.clone(),
            (None, None) => vec![0.0; self.services.len()],
        }
    }

    /// Limits for the services present at tick 0.
    pub fn initial_limits(&self) -> BTreeMap<ServiceId, i64> {
        let start: Vec<_> = self.services.iter().filter(|s| s.present_at_start()).collect();
        let explicit: i64 = start.iter().filter_map(|s| s.initial_limit_mc).sum();
        let implicit: Vec<_> = start.iter().filter(|s| s.initial_limit_mc.is_none()).collect();
        let mut out = BTreeMap::new();
        if !implicit.is_empty() {
            let pool = self.capacity_mc - explicit;
            let n = implicit.len() as i64;
            let (base, extra) = (pool / n, pool % n);
            for (i, s) in implicit.iter().enumerate() {
                out.insert(ServiceId(s.id), base + i64::from((i as i64) < extra));
            }
        }
        for s in start {
            if let Some(limit) = s.initial_limit_mc {
                out.insert(ServiceId(s.id), limit);
            }
        }
        out
    }

    pub fn service_spec(&self, service: &ScenarioService) -> ServiceSpec {
        ServiceSpec {
            id: ServiceId(service.id),
            priority: service.priority,
            work_per_request_mcs: self.work_per_request_mcs,
        }
    }

    /// Expands phases and lifecycle ticks into a per-tick trace.
    pub fn to_trace(&self) -> WorkloadTrace {
        let n = self.horizon as usize;
        let mut rates: BTreeMap<ServiceId, Vec<f64>> = self
            .services
            .iter()
            .map(|s| (ServiceId(s.id), vec![0.0; n]))
            .collect();
        for (i, phase) in self.phases.iter().enumerate() {
            let phase_rates = self.phase_rates(i);
            for (svc, rate) in self.services.iter().zip(phase_rates) {
                let series = rates.get_mut(&ServiceId(svc.id)).expect("initialized");
                for t in phase.start..=phase.end {
                    series[t as usize] = rate;
                }
            }
        }
        let initial = self.initial_limits();
        let mut events = Vec::new();
        for s in &self.services {
            let id = ServiceId(s.id);
            events.push(TraceEvent {
                tick: s.add_tick.unwrap_or(0),
                kind: TraceEventKind::Add {
                    spec: self.service_spec(s),
                    initial_limit_mc: initial.get(&id).copied().or(s.initial_limit_mc),
                },
            });
            if let Some(tick) = s.remove_tick {
                events.push(TraceEvent {
                    tick,
                    kind: TraceEventKind::Remove { id },
                });
            }
        }
        events.sort_by_key(|e| e.tick);
        WorkloadTrace {
            horizon: self.horizon,
            rates,
            events,
        }
    }

    /// Copy with service priorities replaced, in service order.
    pub fn with_priorities(&self, priorities: &[u32]) -> Self {
        let mut out = self.clone();
        for (svc, &p) in out.services.iter_mut().zip(priorities) {
            svc.priority = p;
        }
        out
    }
}

/// Priority levels used by the built-in scenarios.
pub const LOW: u32 = 0;
pub const MEDIUM: u32 = 1;
pub const HIGH: u32 = 2;

pub fn builtin_names() -> Vec<&'static str> {
    vec![
        "load",
        "priority-lhm",
        "priority-mlh",
        "priority-hml",
        "scalability",
        "idle",
    ]
}

pub fn builtin(name: &str) -> Option<Scenario> {
    match name {
        "load" => Some(load_scenario()),
        "priority-lhm" => Some(priority_scenario("priority-lhm", [LOW, HIGH, MEDIUM])),
        "priority-mlh" => Some(priority_scenario("priority-mlh", [MEDIUM, LOW, HIGH])),
        "priority-hml" => Some(priority_scenario("priority-hml", [HIGH, MEDIUM, LOW])),
        "scalability" => Some(scalability_scenario()),
        "idle" => Some(idle_scenario()),
        _ => None,
    }
}

fn svc(id: u32, priority: u32) -> ScenarioService {
    ScenarioService {
        id,
        priority,
        initial_limit_mc: None,
        add_tick: None,
        remove_tick: None,
    }
}

fn window(name: &str, start: u64, end: u64) -> Window {
    Window {
        name: name.into(),
        start,
        end,
    }
}

fn share_phase(start: u64, end: u64, shares: [f64; 3]) -> Phase {
    Phase {
        start,
        end,
        shares: Some(shares.to_vec()),
        rates: None,
    }
}

fn rate_phase(start: u64, end: u64, rates: &[f64]) -> Phase {
    Phase {
        start,
        end,
        shares: None,
        rates: Some(rates.to_vec()),
    }
}

/// Three services sharing 100 req/s whose split shifts twice.
pub fn load_scenario() -> Scenario {
    Scenario {
        name: "load".into(),
        description: "three services, 100 req/s total, two load shifts".into(),
        horizon: 22,
        capacity_mc: 1200,
        min_limit_mc: 25,
        tick_seconds: 1,
        work_per_request_mcs: 8.0,
        request_timeout_s: None,
        total_rate: Some(100.0),
        arrival_noise: ArrivalNoise::Poisson,
        services: vec![svc(1, LOW), svc(2, LOW), svc(3, LOW)],
        phases: vec![
            share_phase(0, 7, [25.0, 8.5, 66.5]),
            share_phase(8, 14, [25.0, 72.0, 3.0]),
            share_phase(15, 21, [47.0, 7.0, 46.0]),
        ],
        windows: vec![
            window("phase-1", 0, 7),
            window("phase-2", 8, 14),
            window("phase-3", 15, 21),
        ],
    }
}

/// The load scenario with one priority per service.
pub fn priority_scenario(name: &str, priorities: [u32; 3]) -> Scenario {
    let mut s = load_scenario().with_priorities(&priorities);
    s.name = name.into();
    s.description = format!("load scenario with priorities {priorities:?}");
    s
}

/// Services join a fully allocated pool one at a time, then the first one leaves.
pub fn scalability_scenario() -> Scenario {
    let mut services = vec![svc(1, LOW), svc(2, LOW), svc(3, LOW), svc(4, LOW)];
    services[0].remove_tick = Some(46);
    services[2].add_tick = Some(16);
    services[3].add_tick = Some(31);
    Scenario {
        name: "scalability".into(),
        description: "services added at ticks 16 and 31 to a full pool, service 1 removed at 46"
            .into(),
        horizon: 61,
        capacity_mc: 1500,
        min_limit_mc: 25,
        tick_seconds: 1,
        work_per_request_mcs: 8.0,
        request_timeout_s: None,
        total_rate: None,
        arrival_noise: ArrivalNoise::Poisson,
        services,
        phases: vec![
            rate_phase(0, 15, &[30.0, 40.0, 0.0, 0.0]),
            rate_phase(16, 30, &[30.0, 40.0, 50.0, 0.0]),
            rate_phase(31, 45, &[30.0, 40.0, 50.0, 50.0]),
            rate_phase(46, 60, &[0.0, 40.0, 50.0, 50.0]),
        ],
        windows: vec![
            window("agent-3-added", 16, 30),
            window("agent-4-added", 31, 45),
            window("agent-1-removed", 46, 60),
        ],
    }
}

/// No requests at all. The floor is high enough that one request's service
/// time at the floor stays within the response-time objective.
pub fn idle_scenario() -> Scenario {
    Scenario {
        name: "idle".into(),
        description: "three services with no load".into(),
        horizon: 20,
        capacity_mc: 1200,
        min_limit_mc: 40,
        tick_seconds: 1,
        work_per_request_mcs: 8.0,
        request_timeout_s: None,
        total_rate: None,
        arrival_noise: ArrivalNoise::None,
        services: vec![svc(1, LOW), svc(2, LOW), svc(3, LOW)],
        phases: vec![rate_phase(0, 19, &[0.0, 0.0, 0.0])],
        windows: Vec::new(),
    }
}
