//! Normalized per-agent observations with a fixed-depth history.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sim::{Cluster, ServiceId};

/// Number of variables in one snapshot.
pub const NUM_VARIABLES: usize = 7;

/// One snapshot, every entry in [0, 1]:
/// limit, usage, free pool, utilization, others' mean utilization, own priority,
/// others' mean priority.
pub type Snapshot = [f64; NUM_VARIABLES];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub capacity_mc: f64,
    pub max_priority: u32,
}

impl Normalization {
    fn priority(&self, p: f64) -> f64 {
        if self.max_priority == 0 {
            0.0
        } else {
            (p / self.max_priority as f64).min(1.0)
        }
    }
}

/// Computes the current snapshot for `id` without touching any history.
pub fn snapshot(cluster: &Cluster, id: ServiceId, norm: &Normalization) -> Result<Snapshot> {
    let own = cluster.service(id).ok_or(Error::UnknownService(id))?;
    let cap = norm.capacity_mc;
    let others: Vec<_> = cluster.services().filter(|s| s.id != id).collect();
    let (others_util, others_prio) = if others.is_empty() {
        (0.0, 0.0)
    } else {
        let n = others.len() as f64;
        (
            others.iter().map(|s| s.utilization_pct()).sum::<f64>() / n,
            others.iter().map(|s| s.priority as f64).sum::<f64>() / n,
        )
    };
    Ok([
        own.limit_mc as f64 / cap,
        own.usage_mc / cap,
        cluster.free_mc() as f64 / cap,
        own.utilization_pct() / 100.0,
        others_util / 100.0,
        norm.priority(own.priority as f64),
        norm.priority(others_prio),
    ])
}

/// FIFO of the last `depth` snapshots, newest first.
#[derive(Debug, Clone, PartialEq)]
pub struct HistoryBuffer {
    depth: usize,
    slots: VecDeque<Snapshot>,
}

impl HistoryBuffer {
    pub fn new(depth: usize) -> Self {
        assert!(depth > 0, "history depth must be positive");
        Self {
            depth,
            slots: VecDeque::with_capacity(depth),
        }
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn clear(&mut self) {
        self.slots.clear();
    }

    /// Fills every slot with `snap`.
    pub fn warm_fill(&mut self, snap: Snapshot) {
        self.slots.clear();
        self.slots.extend(std::iter::repeat_n(snap, self.depth));
    }

    /// Pushes `snap` as the newest entry, evicting the oldest. An empty buffer is
    /// warm-filled instead.
    pub fn push(&mut self, snap: Snapshot) {
        if self.slots.is_empty() {
            self.warm_fill(snap);
            return;
        }
        self.slots.pop_back();
        self.slots.push_front(snap);
    }

    pub fn observation(&self) -> Observation {
        let mut values = vec![0.0; NUM_VARIABLES * self.depth];
        for (slot, snap) in self.slots.iter().enumerate() {
            for (var, v) in snap.iter().enumerate() {
                values[var * self.depth + slot] = *v;
            }
        }
        Observation {
            depth: self.depth,
            values,
        }
    }

    /// The observation that would result from pushing `snap`, leaving `self` as is.
    pub fn peek_with(&self, snap: Snapshot) -> Observation {
        let mut next = self.clone();
        next.push(snap);
        next.observation()
    }
}

/// Flattened `7 x depth` matrix, variable-major; slot 0 is the most recent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    depth: usize,
    values: Vec<f64>,
}

impl Observation {
    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn get(&self, variable: usize, slot: usize) -> f64 {
        self.values[variable * self.depth + slot]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Builds an observation from raw values (e.g. a stored transition).
    pub fn from_values(depth: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != NUM_VARIABLES * depth {
            return Err(Error::Shape {
                context: "observation",
                expected: NUM_VARIABLES * depth,
                actual: values.len(),
            });
        }
        Ok(Self { depth, values })
    }
}

/// Snapshots the current state of `id`, pushes it into `history` and returns the
/// resulting observation.
pub fn build_observation(
    cluster: &Cluster,
    id: ServiceId,
    history: &mut HistoryBuffer,
    norm: &Normalization,
) -> Result<Observation> {
    let snap = snapshot(cluster, id, norm)?;
    history.push(snap);
    Ok(history.observation())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{ClusterConfig, ServiceSpec};

    fn cluster(limits_and_prios: &[(i64, u32)]) -> Cluster {
        let mut c = Cluster::new(ClusterConfig::default()).unwrap();
        for (i, &(limit, priority)) in limits_and_prios.iter().enumerate() {
            let spec = ServiceSpec {
                id: ServiceId(i as u32 + 1),
                priority,
                work_per_request_mcs: 8.0,
            };
            c.add_service_at(spec, limit).unwrap();
        }
        c
    }

    const NORM: Normalization = Normalization {
        capacity_mc: 1200.0,
        max_priority: 2,
    };

    #[test]
    fn single_service_normalization() {
        let c = cluster(&[(600, 0)]);
        let mut h = HistoryBuffer::new(5);
        let obs = build_observation(&c, ServiceId(1), &mut h, &NORM).unwrap();
        assert_eq!(obs.len(), 35);
        assert_eq!(obs.get(0, 0), 0.5);
        assert_eq!(obs.get(2, 0), 0.5);
        assert_eq!(obs.get(4, 0), 0.0);
        assert_eq!(obs.get(6, 0), 0.0);
    }

    #[test]
    fn first_build_warm_fills_history() {
        let c = cluster(&[(600, 0)]);
        let mut h = HistoryBuffer::new(5);
        let obs = build_observation(&c, ServiceId(1), &mut h, &NORM).unwrap();
        for var in 0..NUM_VARIABLES {
            for slot in 1..5 {
                assert_eq!(obs.get(var, slot), obs.get(var, 0));
            }
        }
    }

    #[test]
    fn priority_variables() {
        let c = cluster(&[(100, 2), (100, 0), (100, 1)]);
        let snap = snapshot(&c, ServiceId(1), &NORM).unwrap();
        assert_eq!(snap[5], 1.0);
        assert_eq!(snap[6], 0.25);
    }

    #[test]
    fn push_is_fifo_newest_first() {
        let mut h = HistoryBuffer::new(3);
        for i in 0..5 {
            h.push([i as f64; NUM_VARIABLES]);
        }
        let obs = h.observation();
        assert_eq!(obs.get(0, 0), 4.0);
        assert_eq!(obs.get(0, 1), 3.0);
        assert_eq!(obs.get(0, 2), 2.0);
    }

    #[test]
    fn peek_does_not_mutate() {
        let mut h = HistoryBuffer::new(2);
        h.push([0.1; NUM_VARIABLES]);
        let before = h.clone();
        let peeked = h.peek_with([0.9; NUM_VARIABLES]);
        assert_eq!(h, before);
        assert_eq!(peeked.get(3, 0), 0.9);
        assert_eq!(peeked.get(3, 1), 0.1);
    }

    #[test]
    fn inactive_service_errors() {
        let c = cluster(&[(100, 0)]);
        let mut h = HistoryBuffer::new(2);
        assert!(matches!(
            build_observation(&c, ServiceId(4), &mut h, &NORM),
            Err(Error::UnknownService(_))
        ));
    }
}
