//! Reward signal shared by the learning agents.
//!
//! Each agent's reward is `beta * rho + r_s`, where `rho` scores its own CPU
//! utilization and `r_s` is a system-wide term derived from priority-weighted
//! response times. All utilizations are in percentage points.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RewardParams {
    pub eta_lower: f64,
    pub eta_upper: f64,
    /// Weight of the response-time term.
    pub alpha: f64,
    /// Weight of the utilization term, in (0, 1].
    pub beta: f64,
    /// Optional lower bound on the shared term. Off by default.
    #[serde(default)]
    pub shared_floor: Option<f64>,
}

impl Default for RewardParams {
    fn default() -> Self {
        Self {
            eta_lower: 30.0,
            eta_upper: 60.0,
            alpha: 5.0,
            beta: 0.5,
            shared_floor: None,
        }
    }
}

impl RewardParams {
    pub fn validate(&self) -> Result<()> {
        let ok = 0.0 < self.eta_lower
            && self.eta_lower < self.eta_upper
            && self.eta_upper <= 100.0
            && self.alpha > 0.0
            && self.beta > 0.0
            && self.beta <= 1.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid reward parameters {self:?}")))
        }
    }
}

/// Per-agent reward components for one tick.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub rho: f64,
    pub omega: f64,
    pub r_shared: f64,
    pub r_total: f64,
}

/// Utilization reward for one agent.
///
/// Inside `[eta_lower, eta_upper]` it grows linearly with utilization; below the
/// band it follows the change since the previous tick (scaled by 1/10 and clamped
/// to [-1, 1]); above the band it is zero.
pub fn utilization_reward(eta: f64, eta_prev: f64, params: &RewardParams) -> f64 {
    let (lo, hi) = (params.eta_lower, params.eta_upper);
    if (lo..=hi).contains(&eta) {
        1.0 + eta / (hi - lo)
    } else if eta < lo {
        let delta = eta - eta_prev;
        if delta > 0.0 {
            (delta / 10.0).min(1.0)
        } else {
            (delta / 10.0).max(-1.0)
        }
    } else {
        0.0
    }
}

/// Priority-weighted sum of response times: `sum (1 + p_i) * sigma_i`.
pub fn weighted_response_time<I>(services: I) -> f64
where
    I: IntoIterator<Item = (u32, f64)>,
{
    services
        .into_iter()
        .map(|(priority, response)| (1.0 + priority as f64) * response)
        .sum()
}

/// `1 - alpha * (omega - 0.01)`, unclipped unless a floor is configured.
pub fn shared_reward(omega: f64, params: &RewardParams) -> f64 {
    let r = 1.0 - params.alpha * (omega - 0.01);
    match params.shared_floor {
        Some(floor) => r.max(floor),
        None => r,
    }
}

pub fn total_reward(rho: f64, r_shared: f64, beta: f64) -> f64 {
    beta * rho + r_shared
}

/// Convenience wrapper producing the full breakdown for one agent.
pub fn breakdown(eta: f64, eta_prev: f64, omega: f64, params: &RewardParams) -> RewardBreakdown {
    let rho = utilization_reward(eta, eta_prev, params);
    let r_shared = shared_reward(omega, params);
    RewardBreakdown {
        rho,
        omega,
        r_shared,
        r_total: total_reward(rho, r_shared, params.beta),
    }
}
