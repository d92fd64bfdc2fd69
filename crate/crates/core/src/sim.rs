//! Discrete-time model of a shared CPU pool hosting microservices whose limits
//! can be resized in place.
//!
//! Each tick every active service receives `λ·w·tick` millicore-seconds of work,
//! processes up to `limit·tick` of its backlog plus arrivals, and carries the rest
//! over. Work is tracked in integer micro-units so that capacity and work
//! accounting are exact.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Integer micro-units per millicore-second of work.
pub const WORK_SCALE: i64 = 1_000_000;

/// Identifier of a microservice (and of the agent controlling it).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ServiceId(pub u32);

impl fmt::Display for ServiceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClusterConfig {
    /// Size of the shared CPU pool in millicores.
    pub capacity_mc: i64,
    /// Smallest limit any active service may hold.
    pub min_limit_mc: i64,
    /// Length of one decision interval.
    pub tick_seconds: u32,
    /// When set, work that would wait longer than this at the current limit is
    /// dropped at the end of each tick, as clients give up on slow requests.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub request_timeout_s: Option<f64>,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        Self {
            capacity_mc: 1200,
            min_limit_mc: 25,
            tick_seconds: 1,
            request_timeout_s: None,
        }
    }
}

impl ClusterConfig {
    pub fn validate(&self) -> Result<()> {
        if self.capacity_mc <= 0 {
            return Err(Error::Config("capacity_mc must be positive".into()));
        }
        if self.min_limit_mc <= 0 {
            return Err(Error::Config("min_limit_mc must be positive".into()));
        }
        if self.min_limit_mc > self.capacity_mc {
            return Err(Error::Config("min_limit_mc exceeds capacity_mc".into()));
        }
        if self.tick_seconds == 0 {
            return Err(Error::Config("tick_seconds must be positive".into()));
        }
        if self.request_timeout_s.is_some_and(|t| !(t.is_finite() && t > 0.0)) {
            return Err(Error::Config("request_timeout_s must be positive".into()));
        }
        Ok(())
    }

    /// Largest number of services the pool can hold at the floor limit.
    pub fn max_services(&self) -> usize {
        (self.capacity_mc / self.min_limit_mc) as usize
    }
}

/// Static description of a service to be placed on the cluster.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServiceSpec {
    pub id: ServiceId,
    pub priority: u32,
    /// CPU cost of one request, in millicore-seconds.
    pub work_per_request_mcs: f64,
}

/// Live state of one active service.
#[derive(Debug, Clone, PartialEq)]
pub struct MicroserviceState {
    pub id: ServiceId,
    pub limit_mc: i64,
    /// CPU consumed during the last tick.
    pub usage_mc: f64,
    /// Unfinished work in micro-units (see [`WORK_SCALE`]).
    pub backlog: i64,
    pub priority: u32,
    pub work_per_request_mcs: f64,
    /// Latest response-time estimate in seconds.
    pub response_s: f64,
}

impl MicroserviceState {
    fn new(spec: &ServiceSpec, limit_mc: i64) -> Self {
        Self {
            id: spec.id,
            limit_mc,
            usage_mc: 0.0,
            backlog: 0,
            priority: spec.priority,
            work_per_request_mcs: spec.work_per_request_mcs,
            response_s: spec.work_per_request_mcs / limit_mc as f64,
        }
    }

    /// Usage as a share of the limit, in percentage points.
    pub fn utilization_pct(&self) -> f64 {
        100.0 * self.usage_mc / self.limit_mc as f64
    }

    pub fn backlog_mcs(&self) -> f64 {
        self.backlog as f64 / WORK_SCALE as f64
    }
}

/// What happened to one service during a [`Cluster::step`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ServiceTick {
    pub id: ServiceId,
    pub arrived: i64,
    pub processed: i64,
    /// Work discarded by the request timeout.
    pub dropped: i64,
    pub backlog: i64,
    pub usage_mc: f64,
    pub utilization_pct: f64,
    pub response_s: f64,
}

/// The shared pool and every active service on it.
#[derive(Debug, Clone)]
pub struct Cluster {
    config: ClusterConfig,
    services: BTreeMap<ServiceId, MicroserviceState>,
}

impl Cluster {
    pub fn new(config: ClusterConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            services: BTreeMap::new(),
        })
    }

    pub fn config(&self) -> &ClusterConfig {
        &self.config
    }

    pub fn service(&self, id: ServiceId) -> Option<&MicroserviceState> {
        self.services.get(&id)
    }

    /// Active services in ascending id order.
    pub fn services(&self) -> impl Iterator<Item = &MicroserviceState> {
        self.services.values()
    }

    pub fn service_ids(&self) -> Vec<ServiceId> {
        self.services.keys().copied().collect()
    }

    pub fn len(&self) -> usize {
        self.services.len()
    }

    pub fn is_empty(&self) -> bool {
        self.services.is_empty()
    }

    pub fn allocated_mc(&self) -> i64 {
        self.services.values().map(|s| s.limit_mc).sum()
    }

    pub fn free_mc(&self) -> i64 {
        self.config.capacity_mc - self.allocated_mc()
    }

    /// Places a new service at the floor limit.
    pub fn add_service(&mut self, spec: ServiceSpec) -> Result<()> {
        self.add_service_at(spec, self.config.min_limit_mc)
    }

    /// Places a new service with an explicit starting limit.
    pub fn add_service_at(&mut self, spec: ServiceSpec, limit_mc: i64) -> Result<()> {
        if self.services.contains_key(&spec.id) {
            return Err(Error::DuplicateService(spec.id));
        }
        if !(spec.work_per_request_mcs.is_finite() && spec.work_per_request_mcs > 0.0) {
            return Err(Error::Config(format!(
                "service {}: work_per_request_mcs must be positive",
                spec.id
            )));
        }
        if limit_mc < self.config.min_limit_mc {
            return Err(Error::Config(format!(
                "service {}: limit {limit_mc} mc is below the floor of {} mc",
                spec.id, self.config.min_limit_mc
            )));
        }
        let free = self.free_mc();
        if free < limit_mc {
            return Err(Error::InsufficientCapacity {
                needed: limit_mc,
                free,
            });
        }
        self.services
            .insert(spec.id, MicroserviceState::new(&spec, limit_mc));
        Ok(())
    }

    /// Removes a service, returning its limit to the pool. Its backlog is dropped.
    pub fn remove_service(&mut self, id: ServiceId) -> Result<i64> {
        self.services
            .remove(&id)
            .map(|s| s.limit_mc)
            .ok_or(Error::UnknownService(id))
    }

    /// Changes a service's limit without touching its backlog or usage.
    ///
    /// The new limit is clamped to `[min_limit_mc, limit + free]`; the delta that
    /// was actually applied is returned.
    pub fn resize_in_place(&mut self, id: ServiceId, delta_mc: i64) -> Result<i64> {
        let free = self.free_mc();
        let floor = self.config.min_limit_mc;
        let svc = self.services.get_mut(&id).ok_or(Error::UnknownService(id))?;
        let target = (svc.limit_mc + delta_mc).clamp(floor, svc.limit_mc + free);
        let applied = target - svc.limit_mc;
        svc.limit_mc = target;
        Ok(applied)
    }

    /// Shaves existing limits so that at least `needed` millicores are free.
    ///
    /// The shortfall is split in proportion to each service's headroom above the
    /// floor, using largest-remainder rounding (ties to the lower id). Returns the
    /// amount taken from each service that lost capacity.
    pub fn reclaim_proportional(&mut self, needed: i64) -> Result<Vec<(ServiceId, i64)>> {
        let free = self.free_mc();
        let shortfall = needed - free;
        if shortfall <= 0 {
            return Ok(Vec::new());
        }
        let floor = self.config.min_limit_mc;
        let headroom: Vec<(ServiceId, i64)> = self
            .services
            .values()
            .map(|s| (s.id, s.limit_mc - floor))
            .collect();
        let total: i64 = headroom.iter().map(|(_, h)| h).sum();
        if total < shortfall {
            return Err(Error::InsufficientCapacity {
                needed,
                free: free + total,
            });
        }

        let mut shares: Vec<(ServiceId, i64, i128)> = headroom
            .iter()
            .map(|&(id, h)| {
                let exact = h as i128 * shortfall as i128;
                (id, (exact / total as i128) as i64, exact % total as i128)
            })
            .collect();
        let mut remaining = shortfall - shares.iter().map(|s| s.1).sum::<i64>();
        let mut order: Vec<usize> = (0..shares.len()).collect();
        order.sort_by(|&a, &b| shares[b].2.cmp(&shares[a].2).then(shares[a].0.cmp(&shares[b].0)));
        for idx in order {
            if remaining == 0 {
                break;
            }
            let cap = headroom[idx].1;
            if shares[idx].1 < cap {
                shares[idx].1 += 1;
                remaining -= 1;
            }
        }
        debug_assert_eq!(remaining, 0);

        let mut taken = Vec::new();
        for (id, shave, _) in shares {
            if shave > 0 {
                let svc = self.services.get_mut(&id).expect("listed above");
                svc.limit_mc -= shave;
                taken.push((id, shave));
            }
        }
        Ok(taken)
    }

    /// Advances the fluid queues by one tick.
    ///
    /// `rates` maps service ids to request rates (requests per second); services
    /// without an entry receive no requests. Naming an inactive service is an error.
    pub fn step(&mut self, rates: &BTreeMap<ServiceId, f64>) -> Result<Vec<ServiceTick>> {
        for (&id, &rate) in rates {
            if !self.services.contains_key(&id) {
                return Err(Error::Trace(format!("rate given for inactive service {id}")));
            }
            if !(rate.is_finite() && rate >= 0.0) {
                return Err(Error::Trace(format!("service {id}: invalid rate {rate}")));
            }
        }
        let tick = self.config.tick_seconds as i64;
        let mut out = Vec::with_capacity(self.services.len());
        for svc in self.services.values_mut() {
            let rate = rates.get(&svc.id).copied().unwrap_or(0.0);
            let arrived =
                (rate * svc.work_per_request_mcs * tick as f64 * WORK_SCALE as f64).round() as i64;
            let capacity = svc.limit_mc * tick * WORK_SCALE;
            let processed = (svc.backlog + arrived).min(capacity);
            svc.backlog += arrived - processed;
            let dropped = match self.config.request_timeout_s {
                Some(t) => {
                    let max = (t * svc.limit_mc as f64 * WORK_SCALE as f64).round() as i64;
                    (svc.backlog - max).max(0)
                }
                None => 0,
            };
            svc.backlog -= dropped;
            svc.usage_mc = processed as f64 / (tick * WORK_SCALE) as f64;
            svc.response_s = (svc.backlog_mcs() + svc.work_per_request_mcs) / svc.limit_mc as f64;
            out.push(ServiceTick {
                id: svc.id,
                arrived,
                processed,
                dropped,
                backlog: svc.backlog,
                usage_mc: svc.usage_mc,
                utilization_pct: svc.utilization_pct(),
                response_s: svc.response_s,
            });
        }
        Ok(out)
    }
}
