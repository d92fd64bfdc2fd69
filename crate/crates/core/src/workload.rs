//! Per-tick request rates and service lifecycle events.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sim::{ServiceId, ServiceSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TraceEventKind {
    Add {
        spec: ServiceSpec,
        /// Starting limit; `None` places the service at the floor.
        initial_limit_mc: Option<i64>,
    },
    Remove {
        id: ServiceId,
    },
}

/// A lifecycle change applied at the start of `tick`, before any agent observes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub tick: u64,
    #[serde(flatten)]
    pub kind: TraceEventKind,
}

/// Request rates (requests per second) for every service and tick, plus
/// add/remove events.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkloadTrace {
    pub horizon: u64,
    pub rates: BTreeMap<ServiceId, Vec<f64>>,
    pub events: Vec<TraceEvent>,
}

impl WorkloadTrace {
    /// Checks rates, lengths and event consistency.
    pub fn validate(&self) -> Result<()> {
        for (id, series) in &self.rates {
            if (series.len() as u64) < self.horizon {
                return Err(Error::Trace(format!(
                    "service {id}: {} rates for a horizon of {}",
                    series.len(),
                    self.horizon
                )));
            }
            if let Some(bad) = series.iter().find(|r| !(r.is_finite() && **r >= 0.0)) {
                return Err(Error::Trace(format!("service {id}: invalid rate {bad}")));
            }
        }
        let mut events = self.events.clone();
        events.sort_by_key(|e| e.tick);
        let mut live = std::collections::BTreeSet::new();
        for e in &events {
            match &e.kind {
                TraceEventKind::Add { spec, .. } => {
                    if !live.insert(spec.id) {
                        return Err(Error::Trace(format!(
                            "tick {}: service {} added twice",
                            e.tick, spec.id
                        )));
                    }
                }
                TraceEventKind::Remove { id } => {
                    if !live.remove(id) {
                        return Err(Error::Trace(format!(
                            "tick {}: removal of service {id} that is not present",
                            e.tick
                        )));
                    }
                }
            }
        }
        for id in self.rates.keys() {
            let known = events.iter().any(|e| match &e.kind {
                TraceEventKind::Add { spec, .. } => spec.id == *id,
                TraceEventKind::Remove { .. } => false,
            });
            if !known {
                return Err(Error::Trace(format!("rates given for undeclared service {id}")));
            }
        }
        Ok(())
    }

    pub fn rate(&self, id: ServiceId, tick: u64) -> f64 {
        self.rates
            .get(&id)
            .and_then(|s| s.get(tick as usize))
            .copied()
            .unwrap_or(0.0)
    }

    pub fn events_at(&self, tick: u64) -> impl Iterator<Item = &TraceEvent> {
        self.events.iter().filter(move |e| e.tick == tick)
    }

    /// Returns a copy where every rate is replaced by a Poisson draw of the
    /// per-tick request count, divided back into a rate.
    pub fn with_poisson_arrivals<R: Rng + ?Sized>(&self, tick_seconds: u32, rng: &mut R) -> Self {
        let tick = tick_seconds as f64;
        let rates = self
            .rates
            .iter()
            .map(|(&id, series)| {
                let noisy = series
                    .iter()
                    .map(|&rate| {
                        let mean = rate * tick;
                        if mean <= 0.0 {
                            0.0
                        } else {
                            let count: f64 = Poisson::new(mean).expect("positive mean").sample(rng);
                            count / tick
                        }
                    })
                    .collect();
                (id, noisy)
            })
            .collect();
        Self {
            rates,
            ..self.clone()
        }
    }
}

/// Piecewise-constant random load used during training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticLoad {
    /// Upper bound on any single service's request rate.
    pub max_rate: f64,
    pub min_segment_ticks: u64,
    pub max_segment_ticks: u64,
}

impl Default for SyntheticLoad {
    fn default() -> Self {
        Self {
            max_rate: 50.0,
            min_segment_ticks: 3,
            max_segment_ticks: 10,
        }
    }
}

impl SyntheticLoad {
    pub fn validate(&self) -> Result<()> {
        if !(self.max_rate.is_finite() && self.max_rate >= 0.0) {
            return Err(Error::Config("synthetic max_rate must be non-negative".into()));
        }
        if self.min_segment_ticks == 0 || self.min_segment_ticks > self.max_segment_ticks {
            return Err(Error::Config("synthetic segment bounds are inconsistent".into()));
        }
        Ok(())
    }

    /// One service's rate series: segments of uniform length in
    /// `[min_segment_ticks, max_segment_ticks]`, each at a uniform rate in `[0, max_rate]`.
    pub fn series<R: Rng + ?Sized>(&self, horizon: u64, rng: &mut R) -> Vec<f64> {
        let mut out = Vec::with_capacity(horizon as usize);
        while (out.len() as u64) < horizon {
            let len = rng.random_range(self.min_segment_ticks..=self.max_segment_ticks);
            let rate = rng.random_range(0.0..=self.max_rate);
            out.extend(std::iter::repeat_n(rate, len as usize));
        }
        out.truncate(horizon as usize);
        out
    }
}
