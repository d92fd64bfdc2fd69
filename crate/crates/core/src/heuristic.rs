//! Threshold autoscaler used as the comparison baseline.
//!
//! Scales a service up by a fixed step when its utilization is above the upper
//! threshold and down when it is below the lower one. It has no notion of
//! priority.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeuristicConfig {
    pub upper_threshold: f64,
    pub lower_threshold: f64,
    pub step_mc: i64,
    pub cooldown_ticks: u64,
}

impl Default for HeuristicConfig {
    fn default() -> Self {
        Self {
            upper_threshold: 60.0,
            lower_threshold: 30.0,
            step_mc: 50,
            cooldown_ticks: 0,
        }
    }
}

impl HeuristicConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lower_threshold < self.upper_threshold) || self.step_mc <= 0 {
            return Err(Error::Config(format!("invalid heuristic config {self:?}")));
        }
        Ok(())
    }
}

/// The stateless threshold rule.
pub fn heuristic_decide(utilization_pct: f64, config: &HeuristicConfig) -> i64 {
    if utilization_pct > config.upper_threshold {
        config.step_mc
    } else if utilization_pct < config.lower_threshold {
        -config.step_mc
    } else {
        0
    }
}

/// The threshold rule plus a per-service cooldown counter.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct HeuristicController {
    last_change: Option<u64>,
}

impl HeuristicController {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn decide(&mut self, utilization_pct: f64, tick: u64, config: &HeuristicConfig) -> i64 {
        if let Some(last) = self.last_change {
            if tick.saturating_sub(last) < config.cooldown_ticks {
                return 0;
            }
        }
        let delta = heuristic_decide(utilization_pct, config);
        if delta != 0 {
            self.last_change = Some(tick);
        }
        delta
    }

    pub fn reset(&mut self) {
        self.last_change = None;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{Cluster, ClusterConfig, ServiceId, ServiceSpec};

    #[test]
    fn threshold_rule() {
        let cfg = HeuristicConfig::default();
        assert_eq!(heuristic_decide(75.0, &cfg), 50);
        assert_eq!(heuristic_decide(45.0, &cfg), 0);
        assert_eq!(heuristic_decide(30.0, &cfg), 0);
        assert_eq!(heuristic_decide(60.0, &cfg), 0);
        assert_eq!(heuristic_decide(10.0, &cfg), -50);
    }

    #[test]
    fn floor_clamps_the_requested_decrease() {
        let mut c = Cluster::new(ClusterConfig::default()).unwrap();
        let spec = ServiceSpec {
            id: ServiceId(1),
            priority: 0,
            work_per_request_mcs: 8.0,
        };
        c.add_service(spec).unwrap();
        let delta = heuristic_decide(10.0, &HeuristicConfig::default());
        assert_eq!(delta, -50);
        assert_eq!(c.resize_in_place(ServiceId(1), delta).unwrap(), 0);
    }

    #[test]
    fn cooldown_suppresses_changes() {
        let cfg = HeuristicConfig {
            cooldown_ticks: 3,
            ..HeuristicConfig::default()
        };
        let mut ctl = HeuristicController::new();
        assert_eq!(ctl.decide(90.0, 0, &cfg), 50);
        assert_eq!(ctl.decide(90.0, 1, &cfg), 0);
        assert_eq!(ctl.decide(90.0, 2, &cfg), 0);
        assert_eq!(ctl.decide(90.0, 3, &cfg), 50);
    }

    #[test]
    fn zero_cooldown_is_memoryless() {
        let cfg = HeuristicConfig::default();
        let mut ctl = HeuristicController::new();
        for t in 0..5 {
            assert_eq!(ctl.decide(90.0, t, &cfg), 50);
        }
    }
}
