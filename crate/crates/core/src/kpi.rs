//! Service-level indicators computed from episode logs and aggregated over
//! repeated runs.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::engine::EpisodeLog;

/// A tick violates the objective when its response time is strictly above this.
pub const VIOLATION_THRESHOLD_S: f64 = 0.25;

/// Indicators for one service in one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServiceKpi {
    pub service: u32,
    pub ticks: u64,
    pub violation_pct: f64,
    pub mean_response_s: f64,
    /// Sum of absolute limit changes, including capacity taken for new services.
    pub resource_delta_mc: i64,
}

/// Per-service indicators over records with `start <= tick <= end`.
pub fn service_kpis(log: &EpisodeLog, window: Option<(u64, u64)>) -> BTreeMap<u32, ServiceKpi> {
    #[derive(Default)]
    struct Acc {
        ticks: u64,
        violations: u64,
        response: f64,
        delta: i64,
    }
    let mut acc: BTreeMap<u32, Acc> = BTreeMap::new();
    for r in &log.records {
        if let Some((s, e)) = window {
            if r.tick < s || r.tick > e {
                continue;
            }
        }
        let a = acc.entry(r.service).or_default();
        a.ticks += 1;
        a.violations += u64::from(r.response_s > VIOLATION_THRESHOLD_S);
        a.response += r.response_s;
        a.delta += r.applied_delta_mc.abs() + r.reclaimed_mc.abs();
    }
    acc.into_iter()
        .map(|(service, a)| {
            (
                service,
                ServiceKpi {
                    service,
                    ticks: a.ticks,
                    violation_pct: 100.0 * a.violations as f64 / a.ticks as f64,
                    mean_response_s: a.response / a.ticks as f64,
                    resource_delta_mc: a.delta,
                },
            )
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    /// Sample standard deviation; 0 for a single value.
    pub std: f64,
}

impl Stat {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return Self { mean: 0.0, std: 0.0 };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Self { mean, std }
    }
}

/// Indicators for one service averaged over runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServiceSummary {
    pub service: u32,
    pub violation_pct: Stat,
    pub mean_response_s: Stat,
    pub resource_delta_mc: Stat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub violation_pct: f64,
    pub mean_response_s: f64,
    pub resource_delta_mc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowSummary {
    pub name: String,
    pub start: u64,
    pub end: u64,
    pub services: Vec<ServiceSummary>,
}

/// Mean response time, utilization and limit of one service at one tick,
/// averaged over runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimePoint {
    pub tick: u64,
    pub service: u32,
    pub response_s: f64,
    pub utilization_pct: f64,
    pub limit_mc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KpiReport {
    pub scenario: String,
    pub policy: String,
    pub iterations: usize,
    pub seed: u64,
    pub services: Vec<ServiceSummary>,
    pub aggregate: Aggregate,
    pub windows: Vec<WindowSummary>,
    pub timeseries: Vec<TimePoint>,
}

impl KpiReport {
    pub fn service(&self, id: u32) -> Option<&ServiceSummary> {
        self.services.iter().find(|s| s.service == id)
    }

    pub fn window(&self, name: &str) -> Option<&WindowSummary> {
        self.windows.iter().find(|w| w.name == name)
    }

    /// Builds a report from independent runs of one scenario, in run order.
    pub fn from_logs(
        scenario: &crate::scenario::Scenario,
        policy: &str,
        seed: u64,
        logs: &[EpisodeLog],
    ) -> Self {
        let services = summarize(logs, None);
        let n = services.len().max(1) as f64;
        let aggregate = Aggregate {
            violation_pct: services.iter().map(|s| s.violation_pct.mean).sum::<f64>() / n,
            mean_response_s: services.iter().map(|s| s.mean_response_s.mean).sum::<f64>() / n,
            resource_delta_mc: services.iter().map(|s| s.resource_delta_mc.mean).sum::<f64>() / n,
        };
        let windows = scenario
            .windows
            .iter()
            .map(|w| WindowSummary {
                name: w.name.clone(),
                start: w.start,
                end: w.end,
                services: summarize(logs, Some((w.start, w.end))),
            })
            .collect();
        Self {
            scenario: scenario.name.clone(),
            policy: policy.to_string(),
            iterations: logs.len(),
            seed,
            services,
            aggregate,
            windows,
            timeseries: mean_timeseries(logs),
        }
    }
}

/// Per-service statistics across runs. A service missing from a run (never
/// active inside the window) does not contribute to that run.
fn summarize(logs: &[EpisodeLog], window: Option<(u64, u64)>) -> Vec<ServiceSummary> {
    let mut per: BTreeMap<u32, (Vec<f64>, Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for log in logs {
        for (id, k) in service_kpis(log, window) {
            let e = per.entry(id).or_default();
            e.0.push(k.violation_pct);
            e.1.push(k.mean_response_s);
            e.2.push(k.resource_delta_mc as f64);
        }
    }
    per.into_iter()
        .map(|(service, (v, r, d))| ServiceSummary {
            service,
            violation_pct: Stat::of(&v),
            mean_response_s: Stat::of(&r),
            resource_delta_mc: Stat::of(&d),
        })
        .collect()
}

fn mean_timeseries(logs: &[EpisodeLog]) -> Vec<TimePoint> {
    let mut acc: BTreeMap<(u64, u32), (f64, f64, f64, u32)> = BTreeMap::new();
    for log in logs {
        for r in &log.records {
            let e = acc.entry((r.tick, r.service)).or_default();
            e.0 += r.response_s;
            e.1 += r.utilization_pct;
            e.2 += r.limit_mc as f64;
            e.3 += 1;
        }
    }
    acc.into_iter()
        .map(|((tick, service), (resp, util, limit, n))| {
            let n = f64::from(n);
            TimePoint {
                tick,
                service,
                response_s: resp / n,
                utilization_pct: util / n,
                limit_mc: limit / n,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::TickRecord;

    fn rec(tick: u64, service: u32, response_s: f64, applied: i64) -> TickRecord {
        TickRecord {
            episode: 0,
            tick,
            service,
            priority: 0,
            rate: 0.0,
            limit_mc: 100,
            usage_mc: 0.0,
            utilization_pct: 0.0,
            response_s,
            backlog_mcs: 0.0,
            action: 0.0,
            requested_delta_mc: applied,
            applied_delta_mc: applied,
            reclaimed_mc: 0,
            rho: 0.0,
            omega: 0.0,
            r_shared: 0.0,
            reward: 0.0,
        }
    }

    /// Three ticks, two services, computed by hand.
    fn tiny_log() -> EpisodeLog {
        EpisodeLog {
            records: vec![
                rec(0, 1, 0.10, 25),
                rec(0, 2, 0.30, 0),
                rec(1, 1, 0.25, -25),
                rec(1, 2, 0.50, 50),
                rec(2, 1, 0.40, 0),
                rec(2, 2, 0.20, -25),
            ],
        }
    }

    #[test]
    fn hand_computed_kpis() {
        let k = service_kpis(&tiny_log(), None);
        // Service 1: 0.25 is not a violation (strict), 0.40 is.
        assert!((k[&1].violation_pct - 100.0 / 3.0).abs() < 1e-12);
        assert!((k[&1].mean_response_s - 0.25).abs() < 1e-12);
        assert_eq!(k[&1].resource_delta_mc, 50);
        assert!((k[&2].violation_pct - 200.0 / 3.0).abs() < 1e-12);
        assert!((k[&2].mean_response_s - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(k[&2].resource_delta_mc, 75);
    }

    #[test]
    fn windowed_kpis() {
        let k = service_kpis(&tiny_log(), Some((1, 2)));
        assert_eq!(k[&1].ticks, 2);
        assert_eq!(k[&1].violation_pct, 50.0);
        assert_eq!(k[&2].resource_delta_mc, 75);
    }

    #[test]
    fn reclaim_counts_toward_delta() {
        let mut log = tiny_log();
        log.records[0].reclaimed_mc = 10;
        assert_eq!(service_kpis(&log, None)[&1].resource_delta_mc, 60);
    }

    #[test]
    fn stat_mean_and_sample_std() {
        let s = Stat::of(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(s.mean, 2.5);
        assert!((s.std - (5.0f64 / 3.0).sqrt()).abs() < 1e-12);
        assert_eq!(Stat::of(&[7.0]).std, 0.0);
    }

    #[test]
    fn report_over_runs() {
        let s = crate::scenario::idle_scenario();
        let r = KpiReport::from_logs(&s, "heuristic", 0, &[tiny_log(), tiny_log()]);
        assert_eq!(r.iterations, 2);
        assert_eq!(r.services.len(), 2);
        assert_eq!(r.service(1).unwrap().violation_pct.std, 0.0);
        assert_eq!(r.timeseries.len(), 6);
    }
}
